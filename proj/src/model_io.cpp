#include "uqh/model_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <sstream>

namespace uqh {

namespace {

constexpr char kMagic[8] = {'U', 'Q', 'H', 'E', 'A', 'D', 'v', '1'};

class Writer {
 public:
  template <class UInt>
  void put(UInt v) {
    for (std::size_t i = 0; i < sizeof(UInt); ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  }
  void put_f64(double v) { put(std::bit_cast<std::uint64_t>(v)); }
  void put_bytes(std::string_view s) { out_.append(s); }

  void tensor(std::string_view name, std::span<const std::uint64_t> dims, std::span<const double> values) {
    put<std::uint32_t>(static_cast<std::uint32_t>(name.size()));
    put_bytes(name);
    put<std::uint32_t>(static_cast<std::uint32_t>(dims.size()));
    for (auto d : dims) put<std::uint64_t>(d);
    for (double v : values) put_f64(v);
  }
  void tensor(std::string_view name, const Matrix& m) {
    const std::uint64_t dims[2] = {m.rows(), m.cols()};
    tensor(name, dims, m.values());
  }
  void tensor(std::string_view name, const Vector& v) {
    const std::uint64_t dims[1] = {v.size()};
    tensor(name, dims, v);
  }
  void scalar(std::string_view name, double v) { tensor(name, {}, std::span<const double>(&v, 1)); }

  std::string take() { return std::move(out_); }

 private:
  std::string out_;
};

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  void need(std::size_t n, const char* what) {
    if (bytes_.size() - pos_ < n) {
      std::ostringstream os;
      os << "model file truncated while reading " << what << " at byte " << pos_;
      throw FormatError(os.str());
    }
  }
  template <class UInt>
  UInt get(const char* what) {
    need(sizeof(UInt), what);
    UInt v = 0;
    for (std::size_t i = 0; i < sizeof(UInt); ++i) {
      v |= static_cast<UInt>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    }
    pos_ += sizeof(UInt);
    return v;
  }
  double get_f64(const char* what) { return std::bit_cast<double>(get<std::uint64_t>(what)); }
  std::string_view get_bytes(std::size_t n, const char* what) {
    need(n, what);
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

struct RawTensor {
  std::vector<std::uint64_t> dims;
  std::vector<double> values;
};

class TensorTable {
 public:
  explicit TensorTable(std::map<std::string, RawTensor> t) : tensors_(std::move(t)) {}

  const RawTensor& get(const std::string& name, std::size_t rank) const {
    auto it = tensors_.find(name);
    if (it == tensors_.end()) throw FormatError("model file is missing tensor '" + name + "'");
    if (it->second.dims.size() != rank) throw FormatError("model tensor '" + name + "' has unexpected rank");
    return it->second;
  }
  bool has(const std::string& name) const { return tensors_.count(name) != 0; }

  Matrix matrix(const std::string& name, std::size_t rows, std::size_t cols) const {
    const auto& t = get(name, 2);
    if (t.dims[0] != rows || t.dims[1] != cols) throw FormatError("model tensor '" + name + "' has unexpected shape");
    return Matrix(rows, cols, t.values);
  }
  Vector vector(const std::string& name, std::size_t len) const {
    const auto& t = get(name, 1);
    if (t.dims[0] != len) throw FormatError("model tensor '" + name + "' has unexpected length");
    return t.values;
  }
  double scalar(const std::string& name) const { return get(name, 0).values.at(0); }

 private:
  std::map<std::string, RawTensor> tensors_;
};

std::uint32_t tensor_count(const Model& model) {
  switch (model.kind) {
    case HeadKind::Dnn: return 4;
    case HeadKind::Bnn: return 8;
    case HeadKind::Sngp: return std::get<SngpParams>(model.params).finalized ? 10 : 9;
  }
  return 0;
}

}  // namespace

std::string serialize_model(const Model& model) {
  Writer w;
  w.put_bytes(std::string_view(kMagic, sizeof(kMagic)));
  w.put<std::uint8_t>(static_cast<std::uint8_t>(model.kind));
  const HeadConfig& c = model.cfg;
  w.put<std::uint64_t>(c.input_dim);
  w.put<std::uint64_t>(c.hidden);
  w.put<std::uint64_t>(c.rff_dim);
  w.put_f64(c.spectral_bound);
  w.put_f64(c.ridge);
  w.put_f64(c.mean_field_lambda);
  w.put<std::uint64_t>(c.k_samples);
  w.put_f64(c.prior_std);
  w.put<std::uint64_t>(c.power_iters);
  w.put<std::uint64_t>(model.seed);
  w.put<std::uint32_t>(tensor_count(model));

  switch (model.kind) {
    case HeadKind::Dnn: {
      const auto& p = std::get<DnnParams>(model.params);
      w.tensor("w1", p.w1);
      w.tensor("b1", p.b1);
      w.tensor("w2", p.w2);
      w.scalar("b2", p.b2);
      break;
    }
    case HeadKind::Bnn: {
      const auto& p = std::get<BnnParams>(model.params);
      w.tensor("w1_mu", p.w1_mu);
      w.tensor("w1_rho", p.w1_rho);
      w.tensor("b1_mu", p.b1_mu);
      w.tensor("b1_rho", p.b1_rho);
      w.tensor("w2_mu", p.w2_mu);
      w.tensor("w2_rho", p.w2_rho);
      w.scalar("b2_mu", p.b2_mu);
      w.scalar("b2_rho", p.b2_rho);
      break;
    }
    case HeadKind::Sngp: {
      const auto& p = std::get<SngpParams>(model.params);
      w.tensor("w_hid", p.w_hid);
      w.tensor("b_hid", p.b_hid);
      w.tensor("sn_u", p.sn_u);
      w.tensor("sn_v", p.sn_v);
      w.tensor("w_rff", p.w_rff);
      w.tensor("b_rff", p.b_rff);
      w.tensor("beta", p.beta);
      w.tensor("precision", p.precision);
      w.scalar("finalized", p.finalized ? 1.0 : 0.0);
      if (p.finalized) w.tensor("covariance", p.covariance);
      break;
    }
  }
  return w.take();
}

Model deserialize_model(std::string_view bytes) {
  Reader r(bytes);
  if (r.get_bytes(sizeof(kMagic), "magic") != std::string_view(kMagic, sizeof(kMagic))) {
    throw FormatError("bad model file magic (expected \"UQHEADv1\")");
  }
  Model model;
  const auto kind = r.get<std::uint8_t>("head kind");
  if (kind > 2) throw FormatError("unknown head kind byte " + std::to_string(kind));
  model.kind = static_cast<HeadKind>(kind);
  HeadConfig& c = model.cfg;
  c.input_dim = r.get<std::uint64_t>("input_dim");
  c.hidden = r.get<std::uint64_t>("hidden");
  c.rff_dim = r.get<std::uint64_t>("rff_dim");
  c.spectral_bound = r.get_f64("spectral_bound");
  c.ridge = r.get_f64("ridge");
  c.mean_field_lambda = r.get_f64("mean_field_lambda");
  c.k_samples = r.get<std::uint64_t>("k_samples");
  c.prior_std = r.get_f64("prior_std");
  c.power_iters = r.get<std::uint64_t>("power_iters");
  model.seed = r.get<std::uint64_t>("seed");
  try {
    c.validate();
  } catch (const ArgumentError& e) {
    throw FormatError(std::string("model file header: ") + e.what());
  }

  const auto count = r.get<std::uint32_t>("tensor count");
  std::map<std::string, RawTensor> raw;
  for (std::uint32_t t = 0; t < count; ++t) {
    const auto name_len = r.get<std::uint32_t>("tensor name length");
    std::string name(r.get_bytes(name_len, "tensor name"));
    const auto rank = r.get<std::uint32_t>("tensor rank");
    if (rank > 2) throw FormatError("model tensor '" + name + "' has rank " + std::to_string(rank));
    RawTensor rt;
    std::uint64_t elems = 1;
    for (std::uint32_t k = 0; k < rank; ++k) {
      rt.dims.push_back(r.get<std::uint64_t>("tensor dims"));
      if (rt.dims.back() != 0 && elems > (bytes.size() / 8) / rt.dims.back()) {
        throw FormatError("model tensor '" + name + "' is larger than the file");
      }
      elems *= rt.dims.back();
    }
    r.need(8 * elems, "tensor values");
    rt.values.resize(elems);
    for (auto& v : rt.values) v = r.get_f64("tensor values");
    if (!raw.emplace(name, std::move(rt)).second) throw FormatError("duplicate model tensor '" + name + "'");
  }
  if (!r.done()) throw FormatError("model file has trailing bytes");

  const TensorTable t(std::move(raw));
  const std::size_t d = c.input_dim;
  const std::size_t h = c.hidden;
  switch (model.kind) {
    case HeadKind::Dnn:
      model.params = DnnParams{t.matrix("w1", h, d), t.vector("b1", h), t.vector("w2", h), t.scalar("b2")};
      break;
    case HeadKind::Bnn: {
      BnnParams p;
      p.w1_mu = t.matrix("w1_mu", h, d);
      p.w1_rho = t.matrix("w1_rho", h, d);
      p.b1_mu = t.vector("b1_mu", h);
      p.b1_rho = t.vector("b1_rho", h);
      p.w2_mu = t.vector("w2_mu", h);
      p.w2_rho = t.vector("w2_rho", h);
      p.b2_mu = t.scalar("b2_mu");
      p.b2_rho = t.scalar("b2_rho");
      model.params = std::move(p);
      break;
    }
    case HeadKind::Sngp: {
      const std::size_t rff = c.rff_dim;
      SngpParams p;
      p.w_hid = t.matrix("w_hid", h, d);
      p.b_hid = t.vector("b_hid", h);
      p.sn_u = t.vector("sn_u", h);
      p.sn_v = t.vector("sn_v", d);
      p.w_rff = t.matrix("w_rff", rff, h);
      p.b_rff = t.vector("b_rff", rff);
      p.beta = t.vector("beta", rff);
      p.precision = t.matrix("precision", rff, rff);
      p.finalized = t.scalar("finalized") != 0.0;
      if (p.finalized) p.covariance = t.matrix("covariance", rff, rff);
      model.params = std::move(p);
      break;
    }
  }
  return model;
}

void save_model(const std::filesystem::path& path, const Model& model) {
  const std::string bytes = serialize_model(model);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open model file for writing", path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed", path.string());
}

Model load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open model file", path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return deserialize_model(bytes);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

}  // namespace uqh
