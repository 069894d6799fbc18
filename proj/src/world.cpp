#include "flownav/world.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace flownav::world {

namespace {

constexpr double kUnitTol = 1e-9;

// Smallest positive t with |origin + t*dir - center| = radius, or nullopt.
std::optional<double> ray_circle(Vec2 origin, Vec2 dir, Vec2 center, double radius) {
    const Vec2 oc = origin - center;
    const double b = oc.dot(dir);
    const double c = oc.dot(oc) - radius * radius;
    const double disc = b * b - c;
    if (disc < 0.0) return std::nullopt;
    const double sq = std::sqrt(disc);
    const double t0 = -b - sq;
    if (t0 > 0.0) return t0;
    const double t1 = -b + sq;
    if (t1 > 0.0) return t1;
    return std::nullopt;
}

}  // namespace

void TunnelSpec::validate() const {
    if (length <= 0.0) throw ConfigError("tunnel " + name + ": length must be > 0");
    if (width <= 0.0) throw ConfigError("tunnel " + name + ": width must be > 0");
    for (const Obstacle& ob : obstacles) {
        if (ob.radius <= 0.0)
            throw ConfigError("tunnel " + name + ": obstacle radius must be > 0");
        if (ob.radius >= width / 2.0)
            throw ConfigError("tunnel " + name + ": obstacle radius >= width/2");
        if (ob.center.x <= 0.0 || ob.center.x >= length ||
            std::abs(ob.center.y) >= width / 2.0)
            throw ConfigError("tunnel " + name + ": obstacle center outside footprint");
    }
}

double signed_distance(const TunnelSpec& tunnel, Vec2 p) {
    double d = tunnel.width / 2.0 - std::abs(p.y);
    for (const Obstacle& ob : tunnel.obstacles)
        d = std::min(d, (p - ob.center).norm() - ob.radius);
    return d;
}

bool check_collision(const TunnelSpec& tunnel, Vec2 position, double body_radius) {
    return signed_distance(tunnel, position) < body_radius;
}

RayHit raycast(const TunnelSpec& tunnel, Vec2 origin, Vec2 direction) {
    if (std::abs(direction.norm() - 1.0) > kUnitTol)
        throw NumericError("raycast: direction is not unit length");
    if (signed_distance(tunnel, origin) <= 0.0)
        throw NumericError("ray from occupied point");

    double best = kFarPlane;
    HitKind kind = HitKind::FarPlane;

    // Walls are the infinite lines y = +-width/2.
    if (direction.y != 0.0) {
        const double wy = (direction.y > 0.0 ? 1.0 : -1.0) * tunnel.width / 2.0;
        const double t = (wy - origin.y) / direction.y;
        if (t > 0.0 && t < best) {
            best = t;
            kind = HitKind::Wall;
        }
    }
    for (const Obstacle& ob : tunnel.obstacles) {
        const auto t = ray_circle(origin, direction, ob.center, ob.radius);
        if (t && *t < best) {
            best = *t;
            kind = HitKind::Obstacle;
        }
    }
    if (best >= kFarPlane) return {kFarPlane, HitKind::FarPlane};
    return {best, kind};
}

std::vector<TunnelSpec> tunnel_library() {
    // Dimensions are ours; the paper gives none. Obstacle layouts follow the
    // described configurations (two off-center; three with one central).
    // The first 5% of every tunnel is kept obstacle-free for start sampling.
    std::vector<TunnelSpec> lib;
    lib.push_back({0, "easy", 24.0, 4.0,
                   {{{8.0, -0.9}, 0.5}, {{16.0, 1.0}, 0.5}}});
    lib.push_back({1, "difficult", 26.0, 4.0,
                   {{{7.0, -1.1}, 0.5}, {{13.0, 0.0}, 0.5}, {{19.0, 1.1}, 0.5}}});
    lib.push_back({2, "narrow", 20.0, 3.0,
                   {{{10.0, 0.6}, 0.4}}});
    lib.push_back({3, "wide", 30.0, 6.0,
                   {{{9.0, -1.5}, 0.8}, {{17.0, 1.6}, 0.7}, {{24.0, -0.8}, 0.6}}});
    lib.push_back({4, "plain", 25.0, 5.0, {}});
    lib.push_back({5, "slalom", 28.0, 4.5,
                   {{{6.0, 0.8}, 0.45}, {{12.0, -0.9}, 0.5}, {{18.0, 0.9}, 0.5},
                    {{24.0, -0.8}, 0.45}}});
    for (const TunnelSpec& t : lib) t.validate();
    return lib;
}

Vec2 sample_start(const TunnelSpec& tunnel, std::uint64_t seed, double body_radius) {
    Rng rng(seed);
    const double x_hi = kStartZoneFraction * tunnel.length;
    const double x_lo = std::min(0.2, 0.5 * x_hi);
    const double y_bound = tunnel.width / 2.0 - body_radius;
    for (int attempt = 0; attempt < 10000; ++attempt) {
        Vec2 p{rng.uniform(x_lo, x_hi), rng.uniform(-y_bound, y_bound)};
        if (!check_collision(tunnel, p, body_radius)) return p;
    }
    // Unreachable for valid specs: the start zone is obstacle-free.
    throw NumericError("sample_start: no free start position found");
}

double free_space_center(const TunnelSpec& tunnel, double x) {
    const double half = tunnel.width / 2.0;
    // Blocked y-intervals from obstacle cross-sections at this x.
    std::vector<std::pair<double, double>> blocked;
    for (const Obstacle& ob : tunnel.obstacles) {
        const double dx = x - ob.center.x;
        if (std::abs(dx) >= ob.radius) continue;
        const double ry = std::sqrt(ob.radius * ob.radius - dx * dx);
        blocked.push_back({ob.center.y - ry, ob.center.y + ry});
    }
    std::sort(blocked.begin(), blocked.end());
    double best_mid = 0.0, best_gap = -1.0, lo = -half;
    for (const auto& [b0, b1] : blocked) {
        const double gap_hi = std::min(b0, half);
        if (gap_hi - lo > best_gap) {
            best_gap = gap_hi - lo;
            best_mid = (lo + gap_hi) / 2.0;
        }
        lo = std::max(lo, b1);
    }
    if (half - lo > best_gap) {
        best_gap = half - lo;
        best_mid = (lo + half) / 2.0;
    }
    return best_mid;
}

std::string serialize_tunnel(const TunnelSpec& spec) {
    std::ostringstream out;
    char buf[128];
    out << "id = " << spec.id << "\n";
    out << "name = " << spec.name << "\n";
    std::snprintf(buf, sizeof buf, "length = %.17g\n", spec.length);
    out << buf;
    std::snprintf(buf, sizeof buf, "width = %.17g\n", spec.width);
    out << buf;
    for (const Obstacle& ob : spec.obstacles) {
        std::snprintf(buf, sizeof buf, "obstacle = %.17g, %.17g, %.17g\n",
                      ob.center.x, ob.center.y, ob.radius);
        out << buf;
    }
    return out.str();
}

void save_tunnel(const TunnelSpec& spec, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw IoError("cannot write tunnel file: " + path);
    f << serialize_tunnel(spec);
    if (!f.good()) throw IoError("write failed: " + path);
}

TunnelSpec load_tunnel(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open tunnel file: " + path);
    TunnelSpec spec;
    std::string line;
    int lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            if (line.find_first_not_of(" \t\r") != std::string::npos)
                throw ConfigError(path + ":" + std::to_string(lineno) + ": expected key = value");
            continue;
        }
        auto trim = [](std::string s) {
            const auto b = s.find_first_not_of(" \t\r");
            const auto e = s.find_last_not_of(" \t\r");
            return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
        };
        const std::string key = trim(line.substr(0, eq));
        const std::string val = trim(line.substr(eq + 1));
        if (key == "id") spec.id = std::stoi(val);
        else if (key == "name") spec.name = val;
        else if (key == "length") spec.length = std::stod(val);
        else if (key == "width") spec.width = std::stod(val);
        else if (key == "obstacle") {
            Obstacle ob;
            char comma1 = 0, comma2 = 0;
            std::istringstream iss(val);
            iss >> ob.center.x >> comma1 >> ob.center.y >> comma2 >> ob.radius;
            if (!iss || comma1 != ',' || comma2 != ',')
                throw ConfigError(path + ":" + std::to_string(lineno) + ": bad obstacle triple");
            spec.obstacles.push_back(ob);
        } else {
            throw ConfigError(path + ":" + std::to_string(lineno) + ": unknown key '" + key + "'");
        }
    }
    spec.validate();
    return spec;
}

std::vector<TunnelSpec> load_tunnel_dir(const std::string& dir) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(dir)) throw IoError("not a directory: " + dir);
    std::vector<TunnelSpec> specs;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (entry.path().extension() == ".tunnel")
            specs.push_back(load_tunnel(entry.path().string()));
    }
    if (specs.empty()) throw IoError("no .tunnel files in " + dir);
    std::sort(specs.begin(), specs.end(),
              [](const TunnelSpec& a, const TunnelSpec& b) { return a.id < b.id; });
    return specs;
}

std::uint64_t library_hash(const std::vector<TunnelSpec>& specs) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (const TunnelSpec& s : specs) h = fnv1a(serialize_tunnel(s), h);
    return h;
}

}  // namespace flownav::world
