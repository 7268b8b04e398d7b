#include "scnn/nets/mlp.hpp"

#include <fstream>
#include <random>
#include <sstream>

#include "json.hpp"
#include "scnn/error.hpp"

namespace scnn::nets {

using nlohmann::ordered_json;

namespace {

std::vector<std::pair<int, int>> layer_shapes(const MLPSpec& spec) {
  std::vector<std::pair<int, int>> shapes;
  int in = spec.input_dim;
  for (int l = 0; l < spec.hidden_layers; ++l) {
    shapes.emplace_back(spec.hidden_dim, in);
    in = spec.hidden_dim;
  }
  shapes.emplace_back(spec.output_dim, in);
  return shapes;
}

std::string shape_list(const MLPSpec& spec) {
  std::string s;
  for (auto [r, c] : layer_shapes(spec)) {
    if (!s.empty()) s += ",";
    s += std::to_string(r) + "x" + std::to_string(c);
  }
  return "[" + s + "]";
}

Eigen::MatrixXd orthogonal(int rows, int cols, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  const bool wide = rows < cols;
  const int tall_rows = wide ? cols : rows;
  const int tall_cols = wide ? rows : cols;
  Eigen::MatrixXd a(tall_rows, tall_cols);
  for (int j = 0; j < tall_cols; ++j) {
    for (int i = 0; i < tall_rows; ++i) a(i, j) = normal(rng);
  }
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(a);
  Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(tall_rows, tall_cols);
  // Sign convention makes the factorization unique.
  const Eigen::MatrixXd r = qr.matrixQR().topRows(tall_cols).triangularView<Eigen::Upper>();
  for (int j = 0; j < tall_cols; ++j) {
    if (r(j, j) < 0.0) q.col(j) *= -1.0;
  }
  return wide ? Eigen::MatrixXd(q.transpose()) : q;
}

}  // namespace

std::string MLPSpec::describe() const {
  return "in=" + std::to_string(input_dim) + " out=" + std::to_string(output_dim) +
         " hidden=" + std::to_string(hidden_dim) + "x" + std::to_string(hidden_layers) + " tanh";
}

void validate(const MLPSpec& spec) {
  if (spec.input_dim < 1 || spec.output_dim < 1 || spec.hidden_dim < 1 || spec.hidden_layers < 0) {
    throw StructuralError("invalid network spec: " + spec.describe());
  }
}

std::size_t parameter_count(const MLPSpec& spec) {
  std::size_t n = 0;
  for (auto [r, c] : layer_shapes(spec)) n += static_cast<std::size_t>(r) * c + r;
  return n;
}

bool MLPParams::operator==(const MLPParams& other) const {
  if (!(spec == other.spec) || layers.size() != other.layers.size()) return false;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    if (layers[l].weight != other.layers[l].weight || layers[l].bias != other.layers[l].bias) {
      return false;
    }
  }
  return true;
}

MLPParams zeros(const MLPSpec& spec) {
  validate(spec);
  MLPParams p{spec, {}};
  for (auto [r, c] : layer_shapes(spec)) {
    p.layers.push_back(Layer{Eigen::MatrixXd::Zero(r, c), Eigen::VectorXd::Zero(r)});
  }
  return p;
}

MLPParams init_orthogonal(const MLPSpec& spec, std::uint64_t seed) {
  MLPParams p = zeros(spec);
  std::mt19937_64 rng(seed);
  for (auto& layer : p.layers) {
    layer.weight = orthogonal(static_cast<int>(layer.weight.rows()),
                              static_cast<int>(layer.weight.cols()), rng);
  }
  return p;
}

Eigen::VectorXd flatten(const MLPParams& params) {
  Eigen::VectorXd flat(params.parameter_count());
  Eigen::Index at = 0;
  for (const auto& layer : params.layers) {
    for (Eigen::Index i = 0; i < layer.weight.rows(); ++i) {
      for (Eigen::Index j = 0; j < layer.weight.cols(); ++j) flat[at++] = layer.weight(i, j);
    }
    for (Eigen::Index i = 0; i < layer.bias.size(); ++i) flat[at++] = layer.bias[i];
  }
  return flat;
}

void unflatten(std::span<const double> flat, MLPParams& params) {
  if (flat.size() != params.parameter_count()) {
    throw StructuralError("unflatten: expected " + std::to_string(params.parameter_count()) +
                          " values, got " + std::to_string(flat.size()));
  }
  std::size_t at = 0;
  for (auto& layer : params.layers) {
    for (Eigen::Index i = 0; i < layer.weight.rows(); ++i) {
      for (Eigen::Index j = 0; j < layer.weight.cols(); ++j) layer.weight(i, j) = flat[at++];
    }
    for (Eigen::Index i = 0; i < layer.bias.size(); ++i) layer.bias[i] = flat[at++];
  }
}

Eigen::MatrixXd forward(const MLPParams& params, const Eigen::MatrixXd& x) {
  if (x.rows() != params.spec.input_dim) {
    throw StructuralError("forward: input has " + std::to_string(x.rows()) + " rows, net expects " +
                          std::to_string(params.spec.input_dim));
  }
  Eigen::MatrixXd h = x;
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    const auto& layer = params.layers[l];
    Eigen::MatrixXd z = (layer.weight * h).colwise() + layer.bias;
    if (l + 1 < params.layers.size()) z = z.array().tanh();
    h = std::move(z);
  }
  return h;
}

// --- scalar path -------------------------------------------------------------

ScalarNet::ScalarNet(ad::Tape& tape, const MLPParams& params, bool track) : spec_(params.spec) {
  auto place = [&](double v) {
    ad::DiffScalar s = track ? tape.var(v) : tape.lift(v);
    if (track) leaves_.push_back(s);
    return s;
  };
  for (const auto& layer : params.layers) {
    BoundLayer b{static_cast<int>(layer.weight.rows()), static_cast<int>(layer.weight.cols()), {}, {}};
    for (int i = 0; i < b.rows; ++i) {
      for (int j = 0; j < b.cols; ++j) b.weight.push_back(place(layer.weight(i, j)));
    }
    for (int i = 0; i < b.rows; ++i) b.bias.push_back(place(layer.bias[i]));
    layers_.push_back(std::move(b));
  }
}

std::vector<ad::DiffScalar> ScalarNet::forward(std::span<const ad::DiffScalar> x) const {
  if (static_cast<int>(x.size()) != spec_.input_dim) {
    throw StructuralError("forward: input has " + std::to_string(x.size()) + " entries, net expects " +
                          std::to_string(spec_.input_dim));
  }
  std::vector<ad::DiffScalar> h(x.begin(), x.end());
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const auto& layer = layers_[l];
    std::vector<ad::DiffScalar> z;
    z.reserve(layer.rows);
    for (int i = 0; i < layer.rows; ++i) {
      ad::DiffScalar acc = layer.bias[i];
      for (int j = 0; j < layer.cols; ++j) acc = acc + layer.weight[i * layer.cols + j] * h[j];
      z.push_back(l + 1 < layers_.size() ? ad::tanh(acc) : acc);
    }
    h = std::move(z);
  }
  return h;
}

std::vector<ad::DiffScalar> forward(ad::Tape& tape, const MLPParams& params,
                                    std::span<const ad::DiffScalar> x) {
  return ScalarNet(tape, params, false).forward(x);
}

// --- matrix path -------------------------------------------------------------

MatrixNet bind(ad::MatrixTape& tape, const MLPParams& params, bool track) {
  MatrixNet net{params.spec, {}, {}};
  for (const auto& layer : params.layers) {
    net.weights.push_back(track ? tape.parameter(layer.weight) : tape.constant(layer.weight));
    net.biases.push_back(track ? tape.parameter(layer.bias) : tape.constant(layer.bias));
  }
  return net;
}

Eigen::VectorXd flatten_gradient(const MatrixNet& net, ad::MatrixTape& tape, ad::MatNode loss) {
  std::vector<ad::MatNode> leaves;
  for (std::size_t l = 0; l < net.weights.size(); ++l) {
    leaves.push_back(net.weights[l]);
    leaves.push_back(net.biases[l]);
  }
  const auto grads = tape.backward(loss, leaves);
  MLPParams shaped{net.spec, {}};
  for (std::size_t l = 0; l < net.weights.size(); ++l) {
    shaped.layers.push_back(Layer{grads[2 * l], grads[2 * l + 1].col(0)});
  }
  return flatten(shaped);
}

ad::MatNode forward(const MatrixNet& net, ad::MatNode x) {
  ad::MatrixTape& t = *x.tape;
  if (x.rows() != net.spec.input_dim) {
    throw StructuralError("forward: input has " + std::to_string(x.rows()) + " rows, net expects " +
                          std::to_string(net.spec.input_dim));
  }
  ad::MatNode h = x;
  const std::size_t n = net.weights.size();
  for (std::size_t l = 0; l < n; ++l) {
    ad::MatNode z = t.add_bias(t.matmul(net.weights[l], h), net.biases[l]);
    h = l + 1 < n ? t.tanh(z) : z;
  }
  return h;
}

TangentOutput forward_tangent(const MatrixNet& net, ad::MatNode x, ad::MatNode dx,
                              Eigen::Index directions) {
  ad::MatrixTape& t = *x.tape;
  if (x.rows() != net.spec.input_dim || dx.rows() != net.spec.input_dim ||
      dx.cols() != x.cols() * directions) {
    throw StructuralError("forward_tangent: input shapes do not match " + net.spec.describe());
  }
  ad::MatNode h = x;
  ad::MatNode dh = dx;
  const std::size_t n = net.weights.size();
  for (std::size_t l = 0; l < n; ++l) {
    ad::MatNode z = t.add_bias(t.matmul(net.weights[l], h), net.biases[l]);
    ad::MatNode dz = t.matmul(net.weights[l], dh);
    if (l + 1 < n) {
      h = t.tanh(z);
      ad::MatNode slope = t.affine(t.square(h), -1.0, 1.0);
      dh = t.mul(t.tile_cols(slope, directions), dz);
    } else {
      h = z;
      dh = dz;
    }
  }
  return TangentOutput{h, dh};
}

Eigen::MatrixXd unit_seeds(Eigen::Index dim, Eigen::Index batch) {
  Eigen::MatrixXd s = Eigen::MatrixXd::Zero(dim, batch * dim);
  for (Eigen::Index k = 0; k < dim; ++k) s.block(k, k * batch, 1, batch).setOnes();
  return s;
}

ad::MatNode per_sample_gradient(const TangentOutput& out, Eigen::Index row, Eigen::Index batch,
                                Eigen::Index directions) {
  ad::MatrixTape& t = *out.tangent.tape;
  return t.transpose(t.reshape(t.rows(out.tangent, row, 1), batch, directions));
}

// --- checkpoints -------------------------------------------------------------

namespace {

ordered_json spec_json(const MLPSpec& spec) {
  return ordered_json{{"input_dim", spec.input_dim},
                      {"output_dim", spec.output_dim},
                      {"hidden_dim", spec.hidden_dim},
                      {"hidden_layers", spec.hidden_layers},
                      {"activation", "tanh"}};
}

template <class T>
T field(const ordered_json& j, const char* key) {
  if (!j.is_object() || !j.contains(key)) {
    throw ParseError(std::string("checkpoint: missing key '") + key + "'", 0);
  }
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("checkpoint: bad value for '") + key + "': " + e.what(), 0);
  }
}

}  // namespace

std::string to_json_string(const MLPParams& params) {
  ordered_json j;
  j["format_version"] = 1;
  j["spec"] = spec_json(params.spec);
  ordered_json layers = ordered_json::array();
  for (const auto& layer : params.layers) {
    std::vector<double> w;
    w.reserve(layer.weight.size());
    for (Eigen::Index i = 0; i < layer.weight.rows(); ++i) {
      for (Eigen::Index k = 0; k < layer.weight.cols(); ++k) w.push_back(layer.weight(i, k));
    }
    std::vector<double> b(layer.bias.data(), layer.bias.data() + layer.bias.size());
    layers.push_back(ordered_json{{"rows", layer.weight.rows()},
                                  {"cols", layer.weight.cols()},
                                  {"weights", w},
                                  {"bias", b}});
  }
  j["layers"] = layers;
  return j.dump(1) + "\n";
}

MLPParams from_json_string(const std::string& text) {
  ordered_json j;
  try {
    j = ordered_json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("checkpoint: ") + e.what(), e.byte);
  }
  if (field<int>(j, "format_version") != 1) throw ParseError("checkpoint: unsupported format_version", 0);
  const auto s = field<ordered_json>(j, "spec");
  MLPSpec spec;
  spec.input_dim = field<int>(s, "input_dim");
  spec.output_dim = field<int>(s, "output_dim");
  spec.hidden_dim = field<int>(s, "hidden_dim");
  spec.hidden_layers = field<int>(s, "hidden_layers");
  if (field<std::string>(s, "activation") != "tanh") {
    throw ParseError("checkpoint: unsupported activation", 0);
  }
  validate(spec);

  MLPParams p = zeros(spec);
  const auto layers = field<std::vector<ordered_json>>(j, "layers");
  if (layers.size() != p.layers.size()) {
    throw StructuralError("checkpoint: spec " + spec.describe() + " needs " +
                          std::to_string(p.layers.size()) + " layers, file has " +
                          std::to_string(layers.size()));
  }
  for (std::size_t l = 0; l < layers.size(); ++l) {
    auto& target = p.layers[l];
    const int rows = field<int>(layers[l], "rows");
    const int cols = field<int>(layers[l], "cols");
    const auto w = field<std::vector<double>>(layers[l], "weights");
    const auto b = field<std::vector<double>>(layers[l], "bias");
    if (rows != target.weight.rows() || cols != target.weight.cols() ||
        w.size() != static_cast<std::size_t>(rows) * cols || b.size() != static_cast<std::size_t>(rows)) {
      throw StructuralError("checkpoint: layer " + std::to_string(l) + " has shape " +
                            std::to_string(rows) + "x" + std::to_string(cols) + ", spec needs " +
                            std::to_string(target.weight.rows()) + "x" +
                            std::to_string(target.weight.cols()));
    }
    for (int i = 0; i < rows; ++i) {
      for (int k = 0; k < cols; ++k) target.weight(i, k) = w[static_cast<std::size_t>(i) * cols + k];
      target.bias[i] = b[i];
    }
  }
  return p;
}

void save_checkpoint(const MLPParams& params, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << to_json_string(params);
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

MLPParams load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return from_json_string(buf.str());
}

MLPParams load_checkpoint(const std::filesystem::path& path, const MLPSpec& expected) {
  MLPParams p = load_checkpoint(path);
  if (!(p.spec == expected)) {
    throw StructuralError("checkpoint " + path.string() + " holds layers " + shape_list(p.spec) +
                          " but layers " + shape_list(expected) + " were expected");
  }
  return p;
}

}  // namespace scnn::nets
