#include "rfrp/harness/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace rfrp::harness {

static_assert(std::endian::native == std::endian::little, "checkpoint IO assumes a little-endian host");

namespace {

constexpr char kMagic[5] = {'R', 'F', 'R', 'P', '1'};

class Writer {
 public:
  template <class T>
  void pod(T v) {
    char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    out_.append(buf, sizeof(T));
  }
  void str(const std::string& s) {
    pod<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
    out_.append(s);
  }
  void block(const ad::Parameter& p) { matrix(p.name, p.value); }
  void matrix(const std::string& name, const Matrix& m) {
    str(name);
    pod<std::uint32_t>(static_cast<std::uint32_t>(m.rows()));
    pod<std::uint32_t>(static_cast<std::uint32_t>(m.cols()));
    out_.append(reinterpret_cast<const char*>(m.data()), static_cast<std::size_t>(m.size()) * sizeof(double));
  }
  std::string& bytes() { return out_; }

 private:
  std::string out_;
};

class Reader {
 public:
  explicit Reader(const std::string& bytes) : in_(bytes) {}
  template <class T>
  T pod() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, in_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string str() {
    const auto n = pod<std::uint32_t>();
    need(n);
    std::string s = in_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  Matrix matrix(std::string& name) {
    name = str();
    const auto rows = pod<std::uint32_t>();
    const auto cols = pod<std::uint32_t>();
    const std::size_t count = static_cast<std::size_t>(rows) * cols;
    need(count * sizeof(double));
    Matrix m(rows, cols);
    std::memcpy(m.data(), in_.data() + pos_, count * sizeof(double));
    pos_ += count * sizeof(double);
    return m;
  }
  void into(ad::Parameter& p) {
    std::string name;
    Matrix m = matrix(name);
    if (name != p.name) throw CheckpointError("checkpoint: expected block '" + p.name + "', found '" + name + "'");
    if (m.rows() != p.value.rows() || m.cols() != p.value.cols()) {
      throw CheckpointError("checkpoint: block '" + name + "' has shape " + std::to_string(m.rows()) + "x" +
                            std::to_string(m.cols()) + ", expected " + std::to_string(p.value.rows()) + "x" +
                            std::to_string(p.value.cols()));
    }
    p.value = std::move(m);
    p.zero_grad();
  }
  bool done() const { return pos_ == in_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > in_.size()) throw CheckpointError("checkpoint: truncated file");
  }
  const std::string& in_;
  std::size_t pos_ = 0;
};

void write_encoder_config(Writer& w, const encoder::EncoderConfig& c) {
  w.pod<std::int32_t>(c.layers);
  w.pod<std::int32_t>(c.embed_dim);
  w.pod<std::int32_t>(c.heads);
  w.pod<std::int32_t>(c.ffn_dim);
  w.pod<std::uint32_t>(static_cast<std::uint32_t>(c.moe_layers.size()));
  for (int l : c.moe_layers) w.pod<std::int32_t>(l);
  w.pod<std::int32_t>(c.feature_dim);
  w.pod<std::int32_t>(c.mlp_dim);
  w.pod<std::int32_t>(c.moe.experts);
  w.pod<std::int32_t>(c.moe.shared);
  w.pod<std::int32_t>(c.moe.top_k);
}

encoder::EncoderConfig read_encoder_config(Reader& r) {
  encoder::EncoderConfig c;
  c.layers = r.pod<std::int32_t>();
  c.embed_dim = r.pod<std::int32_t>();
  c.heads = r.pod<std::int32_t>();
  c.ffn_dim = r.pod<std::int32_t>();
  const auto n = r.pod<std::uint32_t>();
  if (n > 1024) throw CheckpointError("checkpoint: implausible MoE layer count");
  c.moe_layers.clear();
  for (std::uint32_t i = 0; i < n; ++i) c.moe_layers.push_back(r.pod<std::int32_t>());
  c.feature_dim = r.pod<std::int32_t>();
  c.mlp_dim = r.pod<std::int32_t>();
  c.moe.experts = r.pod<std::int32_t>();
  c.moe.shared = r.pod<std::int32_t>();
  c.moe.top_k = r.pod<std::int32_t>();
  return c;
}

void write_field_config(Writer& w, const rfnerf::FieldConfig& c) {
  for (int v : {c.pe_dim, c.attenuation_layers, c.attenuation_width, c.feature_dim, c.radiance_hidden,
                c.radiance_hidden2, c.latent_dim, c.samples}) {
    w.pod<std::int32_t>(v);
  }
}

rfnerf::FieldConfig read_field_config(Reader& r) {
  rfnerf::FieldConfig c;
  for (int* v : {&c.pe_dim, &c.attenuation_layers, &c.attenuation_width, &c.feature_dim, &c.radiance_hidden,
                 &c.radiance_hidden2, &c.latent_dim, &c.samples}) {
    *v = r.pod<std::int32_t>();
  }
  return c;
}

}  // namespace

ModelState ModelState::fresh(const encoder::EncoderConfig& encoder_config, const rfnerf::FieldConfig& field_config,
                             std::uint64_t seed) {
  Rng init(mix_seed(seed, 1));
  return ModelState{encoder::EncoderParams::init(encoder_config, init),
                    pretrain::DecoderRegistry(field_config, mix_seed(seed, 2)),
                    optim::OptimizerState{},
                    Rng(mix_seed(seed, 3)),
                    0};
}

std::string serialize_checkpoint(ModelState& state) {
  Writer w;
  for (char c : kMagic) w.pod<char>(c);
  w.pod<std::uint32_t>(kCheckpointVersion);
  write_encoder_config(w, state.encoder.config);
  write_field_config(w, state.registry.config());
  w.pod<std::uint64_t>(state.registry.seed());
  w.pod<std::int64_t>(state.step);
  w.str(state.rng.state());

  std::vector<ad::Parameter*> enc = optim::parameters_of(state.encoder);
  w.pod<std::uint32_t>(static_cast<std::uint32_t>(enc.size()));
  for (auto* p : enc) w.block(*p);

  w.pod<std::uint32_t>(static_cast<std::uint32_t>(state.registry.size()));
  for (auto& [id, field] : state.registry.fields()) {
    w.str(id);
    for (int c = 0; c < 3; ++c) w.pod<double>(field.bounds.lo(c));
    for (int c = 0; c < 3; ++c) w.pod<double>(field.bounds.hi(c));
    std::vector<ad::Parameter*> ps = optim::parameters_of(field);
    w.pod<std::uint32_t>(static_cast<std::uint32_t>(ps.size()));
    for (auto* p : ps) w.block(*p);
  }

  const auto& a = state.optimizer.config;
  for (double v : {a.beta1, a.beta2, a.eps, a.weight_decay, a.clip_norm}) w.pod<double>(v);
  w.pod<std::uint32_t>(static_cast<std::uint32_t>(state.optimizer.moments.size()));
  for (const auto& [name, mo] : state.optimizer.moments) {
    w.str(name);
    w.pod<std::int64_t>(mo.step);
    w.matrix("m", mo.m);
    w.matrix("v", mo.v);
  }
  return std::move(w.bytes());
}

ModelState deserialize_checkpoint(const std::string& bytes) {
  Reader r(bytes);
  for (char c : kMagic) {
    if (r.pod<char>() != c) throw CheckpointError("checkpoint: bad magic, not an RFRP checkpoint");
  }
  const auto version = r.pod<std::uint32_t>();
  if (version != kCheckpointVersion) throw CheckpointVersionError(version, kCheckpointVersion);
  const auto enc_config = read_encoder_config(r);
  const auto field_config = read_field_config(r);
  try {
    enc_config.validate();
    field_config.validate();
  } catch (const InvalidArgument& e) {
    throw CheckpointError(std::string("checkpoint: invalid stored config: ") + e.what());
  }
  const auto registry_seed = r.pod<std::uint64_t>();
  ModelState state = ModelState::fresh(enc_config, field_config, 0);
  state.registry = pretrain::DecoderRegistry(field_config, registry_seed);
  state.step = static_cast<long>(r.pod<std::int64_t>());
  state.rng.set_state(r.str());

  std::vector<ad::Parameter*> enc = optim::parameters_of(state.encoder);
  const auto enc_count = r.pod<std::uint32_t>();
  if (enc_count != enc.size()) throw CheckpointError("checkpoint: encoder block count differs from its config");
  for (auto* p : enc) r.into(*p);

  const auto decoders = r.pod<std::uint32_t>();
  for (std::uint32_t d = 0; d < decoders; ++d) {
    const std::string id = r.str();
    spectrum::Box bounds;
    for (int c = 0; c < 3; ++c) bounds.lo(c) = r.pod<double>();
    for (int c = 0; c < 3; ++c) bounds.hi(c) = r.pod<double>();
    auto& field = state.registry.get_or_create(id, bounds);
    std::vector<ad::Parameter*> ps = optim::parameters_of(field);
    if (r.pod<std::uint32_t>() != ps.size()) throw CheckpointError("checkpoint: decoder '" + id + "' block count");
    for (auto* p : ps) r.into(*p);
  }

  auto& a = state.optimizer.config;
  for (double* v : {&a.beta1, &a.beta2, &a.eps, &a.weight_decay, &a.clip_norm}) *v = r.pod<double>();
  const auto entries = r.pod<std::uint32_t>();
  for (std::uint32_t i = 0; i < entries; ++i) {
    const std::string name = r.str();
    optim::Moments mo;
    mo.step = static_cast<long>(r.pod<std::int64_t>());
    std::string tag;
    mo.m = r.matrix(tag);
    mo.v = r.matrix(tag);
    state.optimizer.moments.emplace(name, std::move(mo));
  }
  if (!r.done()) throw CheckpointError("checkpoint: trailing bytes after optimizer state");
  return state;
}

void save_checkpoint(ModelState& state, const std::string& path) {
  const std::string bytes = serialize_checkpoint(state);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError("checkpoint: cannot write '" + path + "'");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError("checkpoint: write failed for '" + path + "'");
}

ModelState load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("checkpoint: cannot open '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return deserialize_checkpoint(buf.str());
}

CheckpointSummary summarize(ModelState& state) {
  CheckpointSummary s;
  s.version = kCheckpointVersion;
  s.step = state.step;
  s.encoder_parameters = state.encoder.parameter_count();
  for (auto& [id, field] : state.registry.fields()) s.decoders.emplace_back(id, field.parameter_count());
  s.optimizer_entries = state.optimizer.moments.size();
  return s;
}

}  // namespace rfrp::harness
