#include "fscascade/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "fscascade/rng.hpp"
#include "fscascade/sha1.hpp"
#include "fscascade/textkv.hpp"

namespace fscascade {

namespace {

constexpr uint64_t kSceneStream = 0x5ce9eULL;
constexpr char kImageMagic[8] = {'F', 'S', 'I', 'M', 'G', '0', '0', '1'};

struct ShapeMask {
  std::vector<uint8_t> on;  // H*W, 1 where the shape covers the pixel center
  Box tight;
  bool empty = true;
};

// Rasterizes one shape whose analytic footprint is the rectangle
// [cx - w/2, cx + w/2] x [cy - h/2, cy + h/2]. Pixel (i,j) is on when its
// center (j+0.5, i+0.5) lies inside the shape.
ShapeMask rasterize(int64_t class_id, double cx, double cy, double w, double h,
                    int64_t image_h, int64_t image_w) {
  ShapeMask m;
  m.on.assign(static_cast<size_t>(image_h * image_w), 0);
  const double x1 = cx - 0.5 * w, x2 = cx + 0.5 * w;
  const double y1 = cy - 0.5 * h, y2 = cy + 0.5 * h;
  int64_t imin = image_h, imax = -1, jmin = image_w, jmax = -1;
  // Triangle vertices: base corners on the bottom edge, apex top-center.
  const double ax = x1, ay = y2, bx = x2, by = y2, tx = cx, ty = y1;
  for (int64_t i = 0; i < image_h; ++i) {
    const double py = static_cast<double>(i) + 0.5;
    if (py < y1 || py > y2) continue;
    for (int64_t j = 0; j < image_w; ++j) {
      const double px = static_cast<double>(j) + 0.5;
      if (px < x1 || px > x2) continue;
      bool inside = false;
      switch (class_id) {
        case 1:
          inside = true;
          break;
        case 2: {
          const double u = (px - cx) / (0.5 * w);
          const double v = (py - cy) / (0.5 * h);
          inside = u * u + v * v <= 1.0;
          break;
        }
        case 3: {
          const double c1 = (bx - ax) * (py - ay) - (by - ay) * (px - ax);
          const double c2 = (tx - bx) * (py - by) - (ty - by) * (px - bx);
          const double c3 = (ax - tx) * (py - ty) - (ay - ty) * (px - tx);
          inside = (c1 <= 0 && c2 <= 0 && c3 <= 0) ||
                   (c1 >= 0 && c2 >= 0 && c3 >= 0);
          break;
        }
        default:
          throw std::invalid_argument("unknown shape class " +
                                      std::to_string(class_id));
      }
      if (!inside) continue;
      m.on[static_cast<size_t>(i * image_w + j)] = 1;
      imin = std::min(imin, i);
      imax = std::max(imax, i);
      jmin = std::min(jmin, j);
      jmax = std::max(jmax, j);
    }
  }
  if (imax >= 0) {
    m.empty = false;
    // Pixel (i,j) covers [j,j+1) x [i,i+1), so the tight box of the mask is:
    m.tight = Box{static_cast<double>(jmin), static_cast<double>(imin),
                  static_cast<double>(jmax + 1), static_cast<double>(imax + 1)};
  }
  return m;
}

constexpr double kBaseColor[3][3] = {
    {0.80, 0.15, 0.10},  // rectangle: red
    {0.10, 0.75, 0.15},  // ellipse: green
    {0.12, 0.20, 0.85},  // triangle: blue
};

}  // namespace

SceneRecord generate_scene(const SceneSpec& spec, int64_t scene_id) {
  if (spec.size_min <= 0.0 || spec.size_max >= 1.0 ||
      spec.size_min > spec.size_max) {
    throw std::invalid_argument("scene spec: size range must satisfy 0 < min <= max < 1");
  }
  if (spec.max_gt_iou < 0.0 || spec.max_gt_iou >= 1.0) {
    throw std::invalid_argument("scene spec: max_gt_iou must be in [0,1)");
  }
  if (spec.objects_min < 1 || spec.objects_min > spec.objects_max) {
    throw std::invalid_argument("scene spec: bad objects range");
  }
  if (spec.num_classes < 1 || spec.num_classes > 3) {
    throw std::invalid_argument("scene spec: num_classes must be 1..3");
  }
  const int64_t ih = spec.image_h, iw = spec.image_w;
  Rng rng(mix_seed(spec.seed, static_cast<uint64_t>(scene_id), kSceneStream));

  std::vector<double> pixels(static_cast<size_t>(3 * ih * iw));
  for (double& p : pixels) p = spec.noise * rng.uniform();

  SceneRecord rec;
  rec.id = scene_id;
  const int64_t count =
      spec.objects_min +
      static_cast<int64_t>(rng.uniform_int(
          static_cast<uint64_t>(spec.objects_max - spec.objects_min + 1)));
  const int64_t budget = std::max<int64_t>(200, 100 * count);
  int64_t tries = 0;
  while (static_cast<int64_t>(rec.gts.size()) < count) {
    if (++tries > budget) {
      throw std::runtime_error(
          "scene " + std::to_string(scene_id) +
          ": could not place objects within the retry budget; loosen the "
          "spec (fewer objects, smaller sizes, or a higher max_gt_iou)");
    }
    const int64_t cls =
        1 + static_cast<int64_t>(
                rng.uniform_int(static_cast<uint64_t>(spec.num_classes)));
    const double w =
        rng.uniform(spec.size_min, spec.size_max) * static_cast<double>(iw);
    const double h =
        rng.uniform(spec.size_min, spec.size_max) * static_cast<double>(ih);
    const double cx = rng.uniform(0.5 * w, static_cast<double>(iw) - 0.5 * w);
    const double cy = rng.uniform(0.5 * h, static_cast<double>(ih) - 0.5 * h);
    const ShapeMask mask = rasterize(cls, cx, cy, w, h, ih, iw);
    if (mask.empty || mask.tight.area() < 4.0) continue;
    bool overlaps = false;
    for (const LabeledBox& g : rec.gts) {
      if (iou(mask.tight, g.box) > spec.max_gt_iou) {
        overlaps = true;
        break;
      }
    }
    if (overlaps) continue;

    double color[3];
    for (int c = 0; c < 3; ++c) {
      color[c] = std::clamp(kBaseColor[cls - 1][c] + rng.uniform(-0.1, 0.1),
                            0.0, 1.0);
    }
    for (int64_t i = 0; i < ih; ++i) {
      for (int64_t j = 0; j < iw; ++j) {
        if (!mask.on[static_cast<size_t>(i * iw + j)]) continue;
        for (int c = 0; c < 3; ++c) {
          pixels[static_cast<size_t>((c * ih + i) * iw + j)] = color[c];
        }
      }
    }
    rec.gts.push_back(LabeledBox{mask.tight, cls});
  }
  rec.image = constant({3, ih, iw}, std::move(pixels));
  return rec;
}

std::vector<SceneRecord> generate_dataset(const SceneSpec& spec, int64_t count,
                                          int64_t first_id) {
  std::vector<SceneRecord> out;
  out.reserve(static_cast<size_t>(count));
  for (int64_t i = 0; i < count; ++i) {
    out.push_back(generate_scene(spec, first_id + i));
  }
  return out;
}

namespace {

std::string image_path(const std::string& dir, int64_t id) {
  return dir + "/scene_" + std::to_string(id) + ".img";
}
std::string ann_path(const std::string& dir, int64_t id) {
  return dir + "/scene_" + std::to_string(id) + ".ann";
}

void write_image_file(const std::string& path, const Tensor& image) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write file: " + path);
  out.write(kImageMagic, sizeof(kImageMagic));
  const int64_t dims[3] = {image->shape[0], image->shape[1], image->shape[2]};
  out.write(reinterpret_cast<const char*>(dims), sizeof(dims));
  out.write(reinterpret_cast<const char*>(image->value.data()),
            static_cast<std::streamsize>(image->value.size() * sizeof(double)));
  if (!out) throw std::runtime_error("write failed: " + path);
}

Tensor read_image_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open file: " + path);
  char magic[8];
  int64_t dims[3];
  in.read(magic, sizeof(magic));
  in.read(reinterpret_cast<char*>(dims), sizeof(dims));
  if (!in || std::memcmp(magic, kImageMagic, sizeof(magic)) != 0) {
    throw std::runtime_error("not an image file: " + path);
  }
  if (dims[0] <= 0 || dims[1] <= 0 || dims[2] <= 0) {
    throw std::runtime_error("corrupt image header: " + path);
  }
  std::vector<double> data(
      static_cast<size_t>(dims[0] * dims[1] * dims[2]));
  in.read(reinterpret_cast<char*>(data.data()),
          static_cast<std::streamsize>(data.size() * sizeof(double)));
  if (!in) throw std::runtime_error("truncated image file: " + path);
  return constant({dims[0], dims[1], dims[2]}, std::move(data));
}

void write_ann_file(const std::string& path, const SceneRecord& rec) {
  std::ostringstream os;
  os << "# fscascade annotations: gt lines carry class_id x1 y1 x2 y2\n";
  os << "scene_id=" << rec.id << "\n";
  for (const LabeledBox& g : rec.gts) {
    os << "gt class_id=" << g.class_id << " x1=" << format_double(g.box.x1)
       << " y1=" << format_double(g.box.y1) << " x2=" << format_double(g.box.x2)
       << " y2=" << format_double(g.box.y2) << "\n";
  }
  write_text_file(path, os.str());
}

std::vector<LabeledBox> read_ann_file(const std::string& path,
                                      int64_t expect_id) {
  std::vector<LabeledBox> gts;
  std::stringstream ss(read_text_file(path));
  std::string line;
  bool saw_id = false;
  while (std::getline(ss, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    if (line.rfind("scene_id=", 0) == 0) {
      if (std::stoll(line.substr(9)) != expect_id) {
        throw std::runtime_error("scene id mismatch in " + path);
      }
      saw_id = true;
      continue;
    }
    if (line.rfind("gt ", 0) == 0) {
      LabeledBox g;
      g.class_id = static_cast<int64_t>(record_field_double(line, "class_id"));
      g.box = Box{record_field_double(line, "x1"),
                  record_field_double(line, "y1"),
                  record_field_double(line, "x2"),
                  record_field_double(line, "y2")};
      gts.push_back(g);
      continue;
    }
    throw std::runtime_error("unrecognized annotation line in " + path + ": " +
                             line);
  }
  if (!saw_id) throw std::runtime_error("missing scene_id in " + path);
  return gts;
}

}  // namespace

void save_dataset(const std::vector<SceneRecord>& records,
                  const SceneSpec& spec, const std::string& dir) {
  std::filesystem::create_directories(dir);
  KvMap m;
  m.set("format", "fscascade-dataset");
  m.set_int("version", 1);
  m.set_int("image_h", spec.image_h);
  m.set_int("image_w", spec.image_w);
  m.set_int("num_classes", spec.num_classes);
  m.set_int("objects_min", spec.objects_min);
  m.set_int("objects_max", spec.objects_max);
  m.set_double("size_min", spec.size_min);
  m.set_double("size_max", spec.size_max);
  m.set_double("max_gt_iou", spec.max_gt_iou);
  m.set_double("noise", spec.noise);
  m.set_int("seed", static_cast<int64_t>(spec.seed));
  m.set_int("count", static_cast<int64_t>(records.size()));
  std::string ids;
  for (size_t i = 0; i < records.size(); ++i) {
    if (i) ids += ",";
    ids += std::to_string(records[i].id);
  }
  m.set("scene_ids", ids);
  write_kv_file(dir + "/manifest.txt", m);
  for (const SceneRecord& rec : records) {
    write_image_file(image_path(dir, rec.id), rec.image);
    write_ann_file(ann_path(dir, rec.id), rec);
  }
}

Dataset load_dataset(const std::string& dir) {
  const KvMap m = read_kv_file(dir + "/manifest.txt");
  if (m.get("format") != "fscascade-dataset") {
    throw std::runtime_error(dir + "/manifest.txt: not a dataset manifest");
  }
  Dataset ds;
  ds.spec.image_h = m.get_int("image_h");
  ds.spec.image_w = m.get_int("image_w");
  ds.spec.num_classes = m.get_int("num_classes");
  ds.spec.objects_min = m.get_int("objects_min");
  ds.spec.objects_max = m.get_int("objects_max");
  ds.spec.size_min = m.get_double("size_min");
  ds.spec.size_max = m.get_double("size_max");
  ds.spec.max_gt_iou = m.get_double("max_gt_iou");
  ds.spec.noise = m.get_double("noise");
  ds.spec.seed = static_cast<uint64_t>(m.get_int("seed"));
  std::vector<int64_t> ids;
  {
    std::stringstream ss(m.get("scene_ids"));
    std::string item;
    while (std::getline(ss, item, ',')) {
      if (!item.empty()) ids.push_back(std::stoll(item));
    }
  }
  if (static_cast<int64_t>(ids.size()) != m.get_int("count")) {
    throw std::runtime_error(dir + "/manifest.txt: count != scene_ids length");
  }
  for (int64_t id : ids) {
    SceneRecord rec;
    rec.id = id;
    rec.image = read_image_file(image_path(dir, id));
    rec.gts = read_ann_file(ann_path(dir, id), id);
    ds.records.push_back(std::move(rec));
  }
  return ds;
}

std::string dataset_manifest_hash(const std::string& dir) {
  return sha1_hex(read_text_file(dir + "/manifest.txt"));
}

}  // namespace fscascade
