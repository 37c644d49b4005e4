#include "fscascade/detection_dump.hpp"

#include <sstream>
#include <stdexcept>

#include "fscascade/textkv.hpp"

namespace fscascade {

std::string serialize_detections(const std::vector<Detection>& dets) {
  std::ostringstream os;
  os << "# fscascade detections: image_id class_id score x1 y1 x2 y2\n";
  for (const Detection& d : dets) {
    os << "image_id=" << d.image_id << " class_id=" << d.det.class_id
       << " score=" << format_double(d.det.score)
       << " x1=" << format_double(d.det.box.x1)
       << " y1=" << format_double(d.det.box.y1)
       << " x2=" << format_double(d.det.box.x2)
       << " y2=" << format_double(d.det.box.y2) << "\n";
  }
  return os.str();
}

std::vector<Detection> parse_detections(const std::string& text) {
  std::vector<Detection> out;
  std::stringstream ss(text);
  std::string line;
  while (std::getline(ss, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    Detection d;
    d.image_id = static_cast<int64_t>(record_field_double(line, "image_id"));
    d.det.class_id = static_cast<int64_t>(record_field_double(line, "class_id"));
    d.det.score = record_field_double(line, "score");
    d.det.box = Box{record_field_double(line, "x1"),
                    record_field_double(line, "y1"),
                    record_field_double(line, "x2"),
                    record_field_double(line, "y2")};
    out.push_back(d);
  }
  return out;
}

void save_detections(const std::string& path,
                     const std::vector<Detection>& dets) {
  write_text_file(path, serialize_detections(dets));
}

std::vector<Detection> load_detections(const std::string& path) {
  try {
    return parse_detections(read_text_file(path));
  } catch (const std::exception& e) {
    throw std::runtime_error(path + ": " + e.what());
  }
}

}  // namespace fscascade
