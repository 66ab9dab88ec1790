#include "grounder/models.hpp"

#include <algorithm>
#include <fstream>

#include "grounder/binary_io.hpp"
#include "grounder/errors.hpp"

namespace grounder {

namespace {

constexpr char kMagic[4] = {'G', 'M', 'D', 'L'};

void write_matrix(std::ostream& out, const Eigen::MatrixXd& m) {
  binary::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(m.rows()));
  binary::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(m.cols()));
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) binary::write_pod<double>(out, m(r, c));
  }
}

Eigen::MatrixXd read_matrix(std::istream& in) {
  const auto rows = binary::read_pod<std::uint32_t>(in);
  const auto cols = binary::read_pod<std::uint32_t>(in);
  if (static_cast<std::uint64_t>(rows) * cols > (1ull << 26)) {
    throw FormatError("model: matrix too large");
  }
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = binary::read_pod<double>(in);
  }
  return m;
}

void write_vector(std::ostream& out, const Eigen::VectorXd& v) {
  write_matrix(out, Eigen::MatrixXd(v));
}

Eigen::VectorXd read_vector(std::istream& in) {
  Eigen::MatrixXd m = read_matrix(in);
  if (m.cols() != 1 && m.rows() != 0) throw FormatError("model: expected a column vector");
  return m.col(0);
}

void write_strings(std::ostream& out, const std::vector<std::string>& v) {
  binary::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(v.size()));
  for (const auto& s : v) binary::write_string(out, s);
}

std::vector<std::string> read_strings(std::istream& in) {
  const auto n = binary::read_pod<std::uint32_t>(in);
  if (n > (1u << 20)) throw FormatError("model: string list too long");
  std::vector<std::string> v;
  for (std::uint32_t i = 0; i < n; ++i) v.push_back(binary::read_string(in));
  return v;
}

void write_sketch(std::ostream& out, const SketchParams& p) {
  binary::write_pod<std::uint64_t>(out, p.seed);
  binary::write_pod<std::int32_t>(out, p.input_dim);
  binary::write_pod<std::int32_t>(out, p.sketch_dim);
  binary::write_array(out, p.bucket);
  binary::write_array(out, p.sign);
}

SketchParams read_sketch(std::istream& in) {
  SketchParams p;
  p.seed = binary::read_pod<std::uint64_t>(in);
  p.input_dim = binary::read_pod<std::int32_t>(in);
  p.sketch_dim = binary::read_pod<std::int32_t>(in);
  p.bucket = binary::read_array<std::uint32_t>(in);
  p.sign = binary::read_array<std::int8_t>(in);
  if (static_cast<int>(p.bucket.size()) != p.input_dim ||
      static_cast<int>(p.sign.size()) != p.input_dim) {
    throw FormatError("model: sketch table length mismatch");
  }
  for (auto b : p.bucket) {
    if (static_cast<int>(b) >= p.sketch_dim) throw FormatError("model: sketch bucket out of range");
  }
  return p;
}

void write_mlp(std::ostream& out, const Mlp& mlp) {
  binary::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(mlp.layers().size()));
  for (const auto& l : mlp.layers()) {
    binary::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(l.activation));
    write_matrix(out, l.weights);
    write_vector(out, l.bias);
  }
}

Mlp read_mlp(std::istream& in) {
  const auto n = binary::read_pod<std::uint32_t>(in);
  if (n > 64) throw FormatError("model: too many layers");
  std::vector<DenseLayer> layers;
  for (std::uint32_t i = 0; i < n; ++i) {
    DenseLayer l;
    const auto act = binary::read_pod<std::uint32_t>(in);
    if (act > static_cast<std::uint32_t>(Activation::kSigmoid)) {
      throw FormatError("model: unknown activation");
    }
    l.activation = static_cast<Activation>(act);
    l.weights = read_matrix(in);
    l.bias = read_vector(in);
    layers.push_back(std::move(l));
  }
  try {
    return Mlp(std::move(layers));
  } catch (const DimensionError& e) {
    throw FormatError(std::string("model: ") + e.what());
  }
}

std::ofstream open_for_write(const std::filesystem::path& path, ModelKind kind) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out.write(kMagic, 4);
  binary::write_pod<std::uint32_t>(out, kModelFileVersion);
  binary::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(kind));
  return out;
}

ModelKind read_header(std::istream& in) {
  char magic[4];
  in.read(magic, 4);
  if (!in || !std::equal(magic, magic + 4, kMagic)) {
    throw FormatError("model: bad magic bytes");
  }
  const auto version = binary::read_pod<std::uint32_t>(in);
  if (version != kModelFileVersion) {
    throw FormatError("model: unsupported version " + std::to_string(version));
  }
  const auto kind = binary::read_pod<std::uint32_t>(in);
  if (kind < 1 || kind > 3) throw FormatError("model: unknown kind");
  return static_cast<ModelKind>(kind);
}

std::ifstream open_for_read(const std::filesystem::path& path, ModelKind expected) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw NotFoundError("cannot open model file " + path.string());
  if (read_header(in) != expected) {
    throw FormatError("model file " + path.string() + " holds a different model kind");
  }
  return in;
}

void finish(std::ostream& out, const std::filesystem::path& path) {
  out.flush();
  if (!out) throw Error("failed writing " + path.string());
}

}  // namespace

int EntityModel::class_index(const std::string& name) const {
  auto it = std::find(class_names.begin(), class_names.end(), name);
  return it == class_names.end() ? -1 : static_cast<int>(it - class_names.begin());
}

void EntityModel::validate() const {
  if (text_sketch.sketch_dim != visual_sketch.sketch_dim) {
    throw DimensionError("entity model: sketch dims differ");
  }
  if (head.in_channels() != text_sketch.sketch_dim) {
    throw DimensionError("entity model: head input does not match sketch dim");
  }
  if (classifier_weights.rows() != static_cast<Eigen::Index>(class_names.size())) {
    throw DimensionError("entity model: classifier rows do not match class names");
  }
  if (classifier_weights.cols() != visual_sketch.input_dim) {
    throw DimensionError("entity model: classifier width does not match channels");
  }
}

void AttributeModel::validate() const {
  if (text_sketch.sketch_dim != visual_sketch.sketch_dim) {
    throw DimensionError("attribute model: sketch dims differ");
  }
  if (head.in_channels() != text_sketch.sketch_dim) {
    throw DimensionError("attribute model: head input does not match sketch dim");
  }
  if (dictionary.size() < 1) throw DimensionError("attribute model: empty dictionary");
  if (dictionary.dim() != text_sketch.input_dim ||
      dictionary.dim() != transforms.psi.input_dim()) {
    throw DimensionError("attribute model: atom dim mismatch");
  }
  if (transforms.phi.input_dim() != visual_sketch.input_dim) {
    throw DimensionError("attribute model: phi input does not match channels");
  }
  if (transforms.phi.output_dim() != transforms.psi.output_dim()) {
    throw DimensionError("attribute model: latent dims differ");
  }
}

int ColorModel::color_index(const std::string& name) const {
  auto it = std::find(color_names.begin(), color_names.end(), name);
  return it == color_names.end() ? -1 : static_cast<int>(it - color_names.begin());
}

void ColorModel::validate() const {
  if (transform.empty()) throw DimensionError("color model: no layers");
  if (transform.output_dim() != static_cast<int>(color_names.size())) {
    throw DimensionError("color model: output width does not match color names");
  }
  if (channel_offset < 0) throw DimensionError("color model: negative channel offset");
}

void save_model(const std::filesystem::path& path, const EntityModel& m) {
  m.validate();
  auto out = open_for_write(path, ModelKind::kEntity);
  write_strings(out, m.class_names);
  write_sketch(out, m.text_sketch);
  write_sketch(out, m.visual_sketch);
  write_mlp(out, m.head.mlp());
  write_matrix(out, m.classifier_weights);
  finish(out, path);
}

void save_model(const std::filesystem::path& path, const AttributeModel& m) {
  m.validate();
  auto out = open_for_write(path, ModelKind::kAttribute);
  write_strings(out, m.dictionary.names);
  write_matrix(out, m.dictionary.atoms);
  binary::write_pod<std::uint8_t>(out, m.dictionary.frozen ? 1 : 0);
  write_sketch(out, m.text_sketch);
  write_sketch(out, m.visual_sketch);
  write_mlp(out, m.head.mlp());
  write_mlp(out, m.transforms.phi);
  write_mlp(out, m.transforms.psi);
  finish(out, path);
}

void save_model(const std::filesystem::path& path, const ColorModel& m) {
  m.validate();
  auto out = open_for_write(path, ModelKind::kColor);
  write_strings(out, m.color_names);
  binary::write_pod<std::int32_t>(out, m.channel_offset);
  write_mlp(out, m.transform);
  finish(out, path);
}

EntityModel load_entity_model(const std::filesystem::path& path) {
  auto in = open_for_read(path, ModelKind::kEntity);
  EntityModel m;
  m.class_names = read_strings(in);
  m.text_sketch = read_sketch(in);
  m.visual_sketch = read_sketch(in);
  try {
    m.head = AttentionHeadParams(read_mlp(in));
  } catch (const DimensionError& e) {
    throw FormatError(std::string("model: ") + e.what());
  }
  m.classifier_weights = read_matrix(in);
  try {
    m.validate();
  } catch (const DimensionError& e) {
    throw FormatError(std::string("model: ") + e.what());
  }
  return m;
}

AttributeModel load_attribute_model(const std::filesystem::path& path) {
  auto in = open_for_read(path, ModelKind::kAttribute);
  AttributeModel m;
  m.dictionary.names = read_strings(in);
  m.dictionary.atoms = read_matrix(in);
  m.dictionary.frozen = binary::read_pod<std::uint8_t>(in) != 0;
  m.text_sketch = read_sketch(in);
  m.visual_sketch = read_sketch(in);
  try {
    m.head = AttentionHeadParams(read_mlp(in));
  } catch (const DimensionError& e) {
    throw FormatError(std::string("model: ") + e.what());
  }
  m.transforms.phi = read_mlp(in);
  m.transforms.psi = read_mlp(in);
  if (m.dictionary.atoms.rows() != static_cast<Eigen::Index>(m.dictionary.names.size())) {
    throw FormatError("model: dictionary rows do not match names");
  }
  try {
    m.validate();
  } catch (const DimensionError& e) {
    throw FormatError(std::string("model: ") + e.what());
  }
  return m;
}

ColorModel load_color_model(const std::filesystem::path& path) {
  auto in = open_for_read(path, ModelKind::kColor);
  ColorModel m;
  m.color_names = read_strings(in);
  m.channel_offset = binary::read_pod<std::int32_t>(in);
  m.transform = read_mlp(in);
  try {
    m.validate();
  } catch (const DimensionError& e) {
    throw FormatError(std::string("model: ") + e.what());
  }
  return m;
}

ModelKind peek_model_kind(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw NotFoundError("cannot open model file " + path.string());
  return read_header(in);
}

}  // namespace grounder
