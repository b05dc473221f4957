#include "fous/synthetic.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <random>
#include <stdexcept>

namespace fous {

namespace fs = std::filesystem;
using json = nlohmann::json;

double iou(const Box& a, const Box& b) {
  const double ix1 = std::max(a.x1, b.x1), iy1 = std::max(a.y1, b.y1);
  const double ix2 = std::min(a.x2, b.x2), iy2 = std::min(a.y2, b.y2);
  const double iw = std::max(0.0, ix2 - ix1), ih = std::max(0.0, iy2 - iy1);
  const double inter = iw * ih;
  const double uni = a.area() + b.area() - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

namespace {

struct Rgb {
  double r, g, b;
};

// Deterministic per-identity appearance: two colors and a stripe period.
struct IdentityStyle {
  Rgb c1, c2;
  int period;
};

IdentityStyle identity_style(long id, int domain) {
  std::mt19937_64 rng(0x9e3779b97f4a7c15ULL ^ (static_cast<std::uint64_t>(id) * 2654435761ULL) ^
                      (domain ? 0x5bd1e995ULL : 0ULL));
  std::uniform_real_distribution<double> u(0.15, 0.95);
  IdentityStyle s;
  s.c1 = {u(rng), u(rng), u(rng)};
  s.c2 = {u(rng), u(rng), u(rng)};
  s.period = 3 + static_cast<int>(rng() % 4);
  return s;
}

void set_pixel(Eigen::ArrayXd& img, long W, long y, long x, const Rgb& c) {
  const long base = (y * W + x) * 3;
  img[base] = c.r;
  img[base + 1] = c.g;
  img[base + 2] = c.b;
}

void render_person(SceneSample& scene, const Box& box, long id) {
  const IdentityStyle style = identity_style(id, scene.domain);
  const long x1 = static_cast<long>(box.x1), x2 = static_cast<long>(box.x2);
  const long y1 = static_cast<long>(box.y1), y2 = static_cast<long>(box.y2);
  for (long y = y1; y < y2; ++y)
    for (long x = x1; x < x2; ++x) {
      const long v = y - y1;
      const bool head = v < (y2 - y1) / 5;
      Rgb c = ((v / style.period) % 2 == 0) ? style.c1 : style.c2;
      if (head) c = {0.5 * style.c1.r, 0.5 * style.c1.g, 0.5 * style.c1.b};
      if ((x - x1) % 4 == 0) {  // vertical marker stripe, identity-invariant cue
        c.r = 0.7 * c.r + 0.3 * style.c2.r;
        c.g = 0.7 * c.g + 0.3 * style.c2.g;
        c.b = 0.7 * c.b + 0.3 * style.c2.b;
      }
      set_pixel(scene.image, scene.width, y, x, c);
    }
}

SceneSample render_scene(const SceneConfig& cfg, int domain, std::mt19937_64& rng,
                         const std::vector<long>& ids) {
  SceneSample scene;
  scene.height = cfg.image_height;
  scene.width = cfg.image_width;
  scene.domain = domain;
  scene.image.resize(cfg.image_height * cfg.image_width * 3);

  const double shift = domain == 1 ? cfg.domain_shift : 0.0;
  std::uniform_real_distribution<double> noise(-0.03, 0.03);
  for (long y = 0; y < cfg.image_height; ++y)
    for (long x = 0; x < cfg.image_width; ++x) {
      // Background: horizontal gradient, domain-shifted palette.
      const double t = static_cast<double>(x) / cfg.image_width;
      Rgb c{0.25 + 0.2 * t, 0.3 + 0.1 * t, 0.35 - 0.1 * t};
      c.r += shift * 0.12;
      c.b -= shift * 0.10;
      c.r += noise(rng);
      c.g += noise(rng);
      c.b += noise(rng);
      set_pixel(scene.image, scene.width, y, x, c);
    }

  std::uniform_real_distribution<double> uw(12.0, 20.0), uh(28.0, 44.0);
  for (long id : ids) {
    Box box;
    bool placed = false;
    for (int attempt = 0; attempt < 60 && !placed; ++attempt) {
      const double w = uw(rng), h = uh(rng);
      std::uniform_real_distribution<double> ux(0.0, cfg.image_width - w - 1);
      std::uniform_real_distribution<double> uy(0.0, cfg.image_height - h - 1);
      box = {std::floor(ux(rng)), std::floor(uy(rng)), 0, 0};
      box.x2 = box.x1 + std::floor(w);
      box.y2 = box.y1 + std::floor(h);
      placed = true;
      for (const Box& other : scene.boxes)
        if (iou(box, other) > 0.15) placed = false;
    }
    if (!placed) throw std::runtime_error("scene overcrowded");
    render_person(scene, box, id);
    scene.boxes.push_back(box);
    scene.identities.push_back(id);
  }

  if (shift > 0.0) {
    // Fixed color/contrast transform on the whole target image.
    const double gains[3] = {1.0 + 0.15 * shift, 1.0 - 0.05 * shift, 1.0 + 0.25 * shift};
    for (long i = 0; i < scene.image.size(); ++i) {
      double v = scene.image[i] * gains[i % 3];
      v = 0.5 + (v - 0.5) * (1.0 - 0.15 * shift) + 0.05 * shift;
      scene.image[i] = std::clamp(v, 0.0, 1.0);
    }
  } else {
    for (long i = 0; i < scene.image.size(); ++i)
      scene.image[i] = std::clamp(scene.image[i], 0.0, 1.0);
  }
  return scene;
}

std::vector<SceneSample> generate_domain(const SceneConfig& cfg, int domain,
                                         std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const long max_persons = cfg.persons_max;
  if (max_persons * 20.0 * 44.0 > 0.8 * cfg.image_width * cfg.image_height)
    throw std::runtime_error("scene overcrowded");
  if (cfg.persons_min < 1 || cfg.persons_max < cfg.persons_min)
    throw std::invalid_argument("bad persons range");
  if (cfg.identities < cfg.persons_max)
    throw std::invalid_argument("fewer identities than persons per scene");
  if (cfg.scenes * cfg.persons_min < 2 * cfg.identities)
    throw std::invalid_argument("not enough scenes for every identity to appear twice");

  // Identity schedule: repeated shuffled cycles, so every identity shows up
  // at least twice across the split.
  std::vector<long> pool;
  std::vector<long> cycle(cfg.identities);
  for (long i = 0; i < cfg.identities; ++i) cycle[i] = i + (domain ? 100000 : 0);
  auto refill = [&]() {
    for (long i = cfg.identities - 1; i > 0; --i) {
      std::uniform_int_distribution<long> d(0, i);
      std::swap(cycle[i], cycle[d(rng)]);
    }
    pool.insert(pool.end(), cycle.begin(), cycle.end());
  };

  std::vector<SceneSample> scenes;
  std::uniform_int_distribution<long> np(cfg.persons_min, cfg.persons_max);
  for (long s = 0; s < cfg.scenes; ++s) {
    const long n = np(rng);
    std::vector<long> ids;
    while (static_cast<long>(ids.size()) < n) {
      if (pool.empty()) refill();
      // take the last pool entry not already in this scene (an identity may
      // not appear twice in one scene)
      bool taken = false;
      for (auto it = pool.rbegin(); it != pool.rend(); ++it) {
        if (std::find(ids.begin(), ids.end(), *it) == ids.end()) {
          ids.push_back(*it);
          pool.erase(std::next(it).base());
          taken = true;
          break;
        }
      }
      if (!taken) refill();
    }
    scenes.push_back(render_scene(cfg, domain, rng, ids));
  }
  return scenes;
}

}  // namespace

std::pair<std::vector<SceneSample>, std::vector<SceneSample>>
generate_synthetic_domain_pair(const SceneConfig& config, std::uint64_t seed) {
  auto source = generate_domain(config, 0, seed * 2 + 1);
  auto target = generate_domain(config, 1, seed * 2 + 2);
  return {std::move(source), std::move(target)};
}

std::vector<Proposal> generate_proposals(const SceneSample& scene, double jitter,
                                         long n_background, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<Proposal> out;
  std::uniform_real_distribution<double> fg_score(0.6, 1.0);
  std::uniform_real_distribution<double> bg_score(0.05, 0.45);
  for (size_t g = 0; g < scene.boxes.size(); ++g) {
    const Box& b = scene.boxes[g];
    std::uniform_real_distribution<double> jit(-jitter, jitter);
    for (int attempt = 0; attempt < 20; ++attempt) {
      Box p = b;
      const double dx = jit(rng) * b.width(), dy = jit(rng) * b.height();
      const double sw = 1.0 + jit(rng), sh = 1.0 + jit(rng);
      const double cx = 0.5 * (b.x1 + b.x2) + dx, cy = 0.5 * (b.y1 + b.y2) + dy;
      p.x1 = std::max(0.0, cx - 0.5 * b.width() * sw);
      p.x2 = std::min(static_cast<double>(scene.width), cx + 0.5 * b.width() * sw);
      p.y1 = std::max(0.0, cy - 0.5 * b.height() * sh);
      p.y2 = std::min(static_cast<double>(scene.height), cy + 0.5 * b.height() * sh);
      if (iou(p, b) >= 0.5) {
        out.push_back({p, fg_score(rng), static_cast<long>(g)});
        break;
      }
    }
  }
  std::uniform_real_distribution<double> uw(10.0, 24.0), uh(20.0, 48.0);
  for (long i = 0; i < n_background; ++i) {
    const double w = uw(rng), h = uh(rng);
    std::uniform_real_distribution<double> ux(0.0, scene.width - w - 1);
    std::uniform_real_distribution<double> uy(0.0, scene.height - h - 1);
    Box p;
    p.x1 = std::floor(ux(rng));
    p.y1 = std::floor(uy(rng));
    p.x2 = p.x1 + std::floor(w);
    p.y2 = p.y1 + std::floor(h);
    out.push_back({p, bg_score(rng), -1});
  }
  return out;
}

namespace {

void write_ppm(const std::string& path, const SceneSample& scene) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write image: " + path);
  out << "P6\n" << scene.width << " " << scene.height << "\n255\n";
  std::vector<unsigned char> bytes(scene.image.size());
  for (long i = 0; i < scene.image.size(); ++i)
    bytes[static_cast<size_t>(i)] =
        static_cast<unsigned char>(std::clamp(scene.image[i], 0.0, 1.0) * 255.0 + 0.5);
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
}

SceneSample read_ppm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read image: " + path);
  std::string magic;
  long w, h, maxval;
  in >> magic >> w >> h >> maxval;
  if (magic != "P6" || maxval != 255) throw std::runtime_error("unsupported image: " + path);
  in.get();
  SceneSample scene;
  scene.width = w;
  scene.height = h;
  std::vector<unsigned char> bytes(static_cast<size_t>(w * h * 3));
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!in) throw std::runtime_error("truncated image: " + path);
  scene.image.resize(w * h * 3);
  for (long i = 0; i < scene.image.size(); ++i)
    scene.image[i] = bytes[static_cast<size_t>(i)] / 255.0;
  return scene;
}

void write_split(const std::string& split_dir, const std::vector<SceneSample>& scenes) {
  fs::create_directories(fs::path(split_dir) / "images");
  std::ofstream index(fs::path(split_dir) / "index.jsonl");
  if (!index) throw std::runtime_error("cannot write index in " + split_dir);
  char name[32];
  for (size_t i = 0; i < scenes.size(); ++i) {
    std::snprintf(name, sizeof(name), "images/%06zu.ppm", i);
    write_ppm((fs::path(split_dir) / name).string(), scenes[i]);
    json rec;
    rec["image"] = name;
    rec["domain"] = scenes[i].domain;
    json boxes = json::array(), ids = json::array();
    for (size_t b = 0; b < scenes[i].boxes.size(); ++b) {
      const Box& bb = scenes[i].boxes[b];
      boxes.push_back({bb.x1, bb.y1, bb.x2, bb.y2});
      ids.push_back(scenes[i].identities[b]);
    }
    rec["boxes"] = boxes;
    rec["ids"] = ids;
    index << rec.dump() << "\n";
  }
}

}  // namespace

void write_dataset(const std::string& dir, const std::vector<SceneSample>& source,
                   const std::vector<SceneSample>& target) {
  write_split((fs::path(dir) / "source").string(), source);
  write_split((fs::path(dir) / "target").string(), target);
}

std::vector<SceneSample> read_split(const std::string& split_dir) {
  std::ifstream index(fs::path(split_dir) / "index.jsonl");
  if (!index) throw std::runtime_error("dataset not found");
  std::vector<SceneSample> scenes;
  std::string line;
  while (std::getline(index, line)) {
    if (line.empty()) continue;
    json rec = json::parse(line);
    SceneSample scene = read_ppm((fs::path(split_dir) / rec.at("image").get<std::string>()).string());
    scene.domain = rec.at("domain").get<int>();
    for (const auto& b : rec.at("boxes"))
      scene.boxes.push_back({b[0].get<double>(), b[1].get<double>(),
                             b[2].get<double>(), b[3].get<double>()});
    for (const auto& id : rec.at("ids")) scene.identities.push_back(id.get<long>());
    if (scene.boxes.size() != scene.identities.size())
      throw std::runtime_error("corrupt index: boxes/ids mismatch");
    scenes.push_back(std::move(scene));
  }
  return scenes;
}

}  // namespace fous
