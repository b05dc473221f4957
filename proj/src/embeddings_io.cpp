#include "fous/embeddings_io.hpp"

#include <cstdint>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace fous {

namespace {

void write_i64(std::ofstream& out, std::int64_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

std::int64_t read_i64(std::ifstream& in) {
  std::int64_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof(v));
  return v;
}

}  // namespace

void write_embeddings(const std::string& path, const std::vector<InstanceFeature>& features) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write embeddings: " + path);
  for (const InstanceFeature& f : features) {
    write_i64(out, f.source_image_id);
    write_i64(out, f.box_id);
    write_i64(out, f.vector.size());
    out.write(reinterpret_cast<const char*>(f.vector.data()),
              static_cast<std::streamsize>(sizeof(double) * f.vector.size()));
  }
  if (!out) throw std::runtime_error("write failed: " + path);
}

std::vector<InstanceFeature> read_embeddings(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read embeddings: " + path);
  std::vector<InstanceFeature> out;
  while (true) {
    InstanceFeature f;
    f.source_image_id = read_i64(in);
    if (in.eof()) break;
    f.box_id = read_i64(in);
    const std::int64_t d = read_i64(in);
    if (!in || d < 0 || d > (1 << 20)) throw std::runtime_error("corrupt embeddings: " + path);
    f.vector.resize(d);
    in.read(reinterpret_cast<char*>(f.vector.data()),
            static_cast<std::streamsize>(sizeof(double) * d));
    if (!in) throw std::runtime_error("corrupt embeddings: " + path);
    out.push_back(std::move(f));
  }
  return out;
}

void write_label_file(const std::string& path, const PseudoLabelSet& source_labels,
                      const PseudoLabelSet& random_labels) {
  if (source_labels.assignments.size() != random_labels.assignments.size())
    throw std::invalid_argument("label sets differ in length");
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write labels: " + path);
  out << "instance_id\tl_source\tl_random\td_source\td_random\n";
  out.precision(17);
  for (size_t i = 0; i < source_labels.assignments.size(); ++i) {
    out << i << "\t" << source_labels.assignments[i].label << "\t"
        << random_labels.assignments[i].label << "\t"
        << source_labels.assignments[i].distance << "\t"
        << random_labels.assignments[i].distance << "\n";
  }
}

std::vector<LabelRow> read_label_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read labels: " + path);
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("empty label file: " + path);
  std::vector<LabelRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    LabelRow r;
    if (!(ss >> r.instance_id >> r.l_source >> r.l_random >> r.d_source >> r.d_random))
      throw std::runtime_error("corrupt label file: " + path);
    rows.push_back(r);
  }
  return rows;
}

}  // namespace fous
