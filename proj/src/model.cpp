#include "rgen/model.hpp"

#include "rgen/bpe.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>

static_assert(std::endian::native == std::endian::little,
              "checkpoint serialization assumes a little-endian host");

namespace rgen {

void ModelConfig::validate() const {
  if (num_layers == 0 || n_head == 0 || d_model == 0 || dff == 0 || vocab_size == 0) {
    throw std::invalid_argument("model config: all extents must be positive");
  }
  if (d_model % n_head != 0) {
    throw std::invalid_argument("model config: d_model " + std::to_string(d_model) +
                                " not divisible by n_head " + std::to_string(n_head));
  }
  if (max_len < 2) throw std::invalid_argument("model config: max_len must be >= 2");
  if (dropout < 0.0 || dropout >= 1.0) {
    throw std::invalid_argument("model config: dropout must lie in [0,1)");
  }
  if (grid_h == 0 || grid_w == 0 || grid_c == 0) {
    throw std::invalid_argument("model config: image grid extents must be positive");
  }
  if (vocab_size <= static_cast<std::size_t>(kUnkId)) {
    throw std::invalid_argument("model config: vocab_size must cover the reserved token ids");
  }
}

namespace {

Tensor glorot(std::vector<std::size_t> shape, Rng& rng) {
  const double fan_in = static_cast<double>(shape[0]);
  const double fan_out = static_cast<double>(shape.back());
  const double bound = std::sqrt(6.0 / (fan_in + fan_out));
  Tensor t = Tensor::zeros(std::move(shape), true);
  for (double& v : t.data()) v = rng.uniform(-bound, bound);
  return t;
}

AttentionParams make_attention(const ModelConfig& config, Rng* rng) {
  AttentionParams p;
  const std::size_t d = config.head_dim();
  auto mat = [&](std::vector<std::size_t> shape) {
    return rng ? glorot(std::move(shape), *rng) : Tensor::zeros(std::move(shape), true);
  };
  for (std::size_t h = 0; h < config.n_head; ++h) p.wq.push_back(mat({config.d_model, d}));
  for (std::size_t h = 0; h < config.n_head; ++h) p.wk.push_back(mat({config.d_model, d}));
  for (std::size_t h = 0; h < config.n_head; ++h) p.wv.push_back(mat({config.d_model, d}));
  p.wh = mat({config.n_head * d, config.d_model});
  return p;
}

ModelParams make_params(const ModelConfig& config, Rng* rng) {
  config.validate();
  ModelParams params;
  auto mat = [&](std::vector<std::size_t> shape) {
    return rng ? glorot(std::move(shape), *rng) : Tensor::zeros(std::move(shape), true);
  };
  params.token_embedding = mat({config.vocab_size, config.d_model});
  params.patch_embedding = mat({config.grid_c, config.d_model});
  for (std::size_t l = 0; l < config.num_layers; ++l) {
    LayerParams layer;
    layer.self_attn = make_attention(config, rng);
    layer.cross_attn = make_attention(config, rng);
    layer.ln1_gain = Tensor::full({config.d_model}, 1.0, true);
    layer.ln1_bias = Tensor::zeros({config.d_model}, true);
    layer.ln2_gain = Tensor::full({config.d_model}, 1.0, true);
    layer.ln2_bias = Tensor::zeros({config.d_model}, true);
    layer.ln3_gain = Tensor::full({config.d_model}, 1.0, true);
    layer.ln3_bias = Tensor::zeros({config.d_model}, true);
    layer.ff_w1 = mat({config.d_model, config.dff});
    layer.ff_b1 = Tensor::zeros({config.dff}, true);
    layer.ff_w2 = mat({config.dff, config.d_model});
    layer.ff_b2 = Tensor::zeros({config.d_model}, true);
    params.layers.push_back(std::move(layer));
  }
  params.output_projection = mat({config.d_model, config.vocab_size});
  return params;
}

}  // namespace

ModelParams init_params(const ModelConfig& config, Rng& rng) { return make_params(config, &rng); }

ModelParams zero_params(const ModelConfig& config) { return make_params(config, nullptr); }

std::vector<std::pair<std::string, Tensor>> named_params(const ModelParams& params) {
  std::vector<std::pair<std::string, Tensor>> out;
  out.emplace_back("token_embedding", params.token_embedding);
  out.emplace_back("patch_embedding", params.patch_embedding);
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    const LayerParams& layer = params.layers[l];
    const std::string base = "layers." + std::to_string(l) + ".";
    auto attn = [&](const char* tag, const AttentionParams& a) {
      for (std::size_t h = 0; h < a.wq.size(); ++h) {
        out.emplace_back(base + tag + ".wq." + std::to_string(h), a.wq[h]);
      }
      for (std::size_t h = 0; h < a.wk.size(); ++h) {
        out.emplace_back(base + tag + ".wk." + std::to_string(h), a.wk[h]);
      }
      for (std::size_t h = 0; h < a.wv.size(); ++h) {
        out.emplace_back(base + tag + ".wv." + std::to_string(h), a.wv[h]);
      }
      out.emplace_back(base + tag + ".wh", a.wh);
    };
    attn("self", layer.self_attn);
    attn("cross", layer.cross_attn);
    out.emplace_back(base + "ln1.gain", layer.ln1_gain);
    out.emplace_back(base + "ln1.bias", layer.ln1_bias);
    out.emplace_back(base + "ln2.gain", layer.ln2_gain);
    out.emplace_back(base + "ln2.bias", layer.ln2_bias);
    out.emplace_back(base + "ln3.gain", layer.ln3_gain);
    out.emplace_back(base + "ln3.bias", layer.ln3_bias);
    out.emplace_back(base + "ff.w1", layer.ff_w1);
    out.emplace_back(base + "ff.b1", layer.ff_b1);
    out.emplace_back(base + "ff.w2", layer.ff_w2);
    out.emplace_back(base + "ff.b2", layer.ff_b2);
  }
  out.emplace_back("output_projection", params.output_projection);
  return out;
}

void zero_grads(const ModelParams& params) {
  for (auto& [name, tensor] : named_params(params)) tensor.zero_grad();
}

bool params_all_finite(const ModelParams& params) {
  for (auto& [name, tensor] : named_params(params)) {
    if (!tensor.all_finite()) return false;
  }
  return true;
}

AttentionMask AttentionMask::causal(std::size_t len) {
  Tensor grid = Tensor::zeros({len, len});
  for (std::size_t i = 0; i < len; ++i) {
    for (std::size_t j = i + 1; j < len; ++j) grid.data()[i * len + j] = kMaskedScore;
  }
  return AttentionMask{std::move(grid)};
}

Tensor positional_encoding(std::size_t length, std::size_t d_model) {
  Tensor pe = Tensor::zeros({length, d_model});
  for (std::size_t p = 0; p < length; ++p) {
    for (std::size_t j = 0; j < d_model; ++j) {
      const double exponent = static_cast<double>(2 * (j / 2)) / static_cast<double>(d_model);
      const double angle = static_cast<double>(p) / std::pow(10000.0, exponent);
      pe.data()[p * d_model + j] = (j % 2 == 0) ? std::sin(angle) : std::cos(angle);
    }
  }
  return pe;
}

Tensor flatten_image_features(const Tensor& grid) {
  if (grid.rank() != 3) {
    throw std::invalid_argument("flatten_image_features: expected [h,w,c] grid, got " +
                                shape_str(grid.shape()));
  }
  return reshape(grid, {grid.shape()[0] * grid.shape()[1], grid.shape()[2]});
}

AttentionResult scaled_dot_product_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                                             const AttentionMask* mask) {
  if (q.rank() < 2 || k.rank() < 2 || v.rank() < 2) {
    throw std::invalid_argument("attention: operands must have rank >= 2");
  }
  const std::size_t d = q.shape().back();
  if (k.shape().back() != d) {
    throw std::invalid_argument("attention: query depth " + shape_str(q.shape()) +
                                " does not match key depth " + shape_str(k.shape()));
  }
  if (k.shape()[k.rank() - 2] != v.shape()[v.rank() - 2]) {
    throw std::invalid_argument("attention: key length " + shape_str(k.shape()) +
                                " does not match value length " + shape_str(v.shape()));
  }
  Tensor scores = scale(matmul(q, transpose_last_two(k)), 1.0 / std::sqrt(static_cast<double>(d)));
  if (mask != nullptr) scores = add(scores, mask->grid);
  AttentionResult res;
  res.weights = softmax(scores, -1);
  res.output = matmul(res.weights, v);
  return res;
}

MultiHeadResult multi_head_attention(const Tensor& q_in, const Tensor& k_in, const Tensor& v_in,
                                     const AttentionParams& params, const AttentionMask* mask) {
  MultiHeadResult res;
  std::vector<Tensor> heads;
  heads.reserve(params.wq.size());
  for (std::size_t h = 0; h < params.wq.size(); ++h) {
    AttentionResult head = scaled_dot_product_attention(
        matmul(q_in, params.wq[h]), matmul(k_in, params.wk[h]), matmul(v_in, params.wv[h]), mask);
    heads.push_back(std::move(head.output));
    res.head_weights.push_back(std::move(head.weights));
  }
  res.output = matmul(concat_last_axis(heads), params.wh);
  return res;
}

namespace {

Tensor maybe_dropout(const Tensor& x, const ModelConfig& config, bool train_mode, Rng* rng) {
  if (!train_mode || config.dropout == 0.0) return x;
  if (rng == nullptr) {
    throw std::logic_error("decoder: train-mode dropout needs an RNG");
  }
  return dropout(x, config.dropout, true, *rng);
}

ForwardResult forward_impl(const Tensor& image_seq, const std::vector<int>& token_ids,
                           const std::vector<std::size_t>& lead, const ModelParams& params,
                           const ModelConfig& config, bool train_mode, Rng* rng) {
  const std::size_t len = lead.back();
  if (len == 0) throw std::invalid_argument("decoder: empty token sequence");
  if (len > config.max_len) {
    throw std::invalid_argument("decoder: sequence length " + std::to_string(len) +
                                " exceeds max_len " + std::to_string(config.max_len));
  }
  if (image_seq.shape().back() != config.d_model ||
      image_seq.shape()[image_seq.rank() - 2] != config.image_len()) {
    throw std::invalid_argument("decoder: image sequence shape " + shape_str(image_seq.shape()) +
                                " does not match config [" + std::to_string(config.image_len()) +
                                "," + std::to_string(config.d_model) + "]");
  }

  Tensor x = embedding_lookup(params.token_embedding, token_ids);
  std::vector<std::size_t> xshape = lead;
  xshape.push_back(config.d_model);
  x = reshape(x, std::move(xshape));
  x = add(x, positional_encoding(len, config.d_model));
  x = maybe_dropout(x, config, train_mode, rng);

  const AttentionMask causal = AttentionMask::causal(len);

  ForwardResult res;
  for (const LayerParams& layer : params.layers) {
    MultiHeadResult self = multi_head_attention(x, x, x, layer.self_attn, &causal);
    x = layer_norm(add(x, maybe_dropout(self.output, config, train_mode, rng)), layer.ln1_gain,
                   layer.ln1_bias, kLayerNormEps);

    MultiHeadResult cross =
        multi_head_attention(x, image_seq, image_seq, layer.cross_attn, nullptr);
    x = layer_norm(add(x, maybe_dropout(cross.output, config, train_mode, rng)), layer.ln2_gain,
                   layer.ln2_bias, kLayerNormEps);
    res.cross_attention.push_back(std::move(cross.head_weights));

    Tensor ff = add(matmul(relu(add(matmul(x, layer.ff_w1), layer.ff_b1)), layer.ff_w2),
                    layer.ff_b2);
    x = layer_norm(add(x, maybe_dropout(ff, config, train_mode, rng)), layer.ln3_gain,
                   layer.ln3_bias, kLayerNormEps);
  }
  res.logits = matmul(x, params.output_projection);
  return res;
}

}  // namespace

Tensor embed_image(const Tensor& grid, const ModelParams& params, const ModelConfig& config,
                   bool train_mode, Rng* rng) {
  Tensor flat;
  if (grid.rank() == 3) {
    if (grid.shape() != std::vector<std::size_t>{config.grid_h, config.grid_w, config.grid_c}) {
      throw std::invalid_argument("embed_image: grid shape " + shape_str(grid.shape()) +
                                  " does not match config [" + std::to_string(config.grid_h) +
                                  "," + std::to_string(config.grid_w) + "," +
                                  std::to_string(config.grid_c) + "]");
    }
    flat = flatten_image_features(grid);
  } else if (grid.rank() == 4) {
    if (grid.shape()[1] != config.grid_h || grid.shape()[2] != config.grid_w ||
        grid.shape()[3] != config.grid_c) {
      throw std::invalid_argument("embed_image: batched grid shape " + shape_str(grid.shape()) +
                                  " does not match config grid");
    }
    flat = reshape(grid, {grid.shape()[0], config.image_len(), config.grid_c});
  } else {
    throw std::invalid_argument("embed_image: expected rank 3 or 4 grid, got " +
                                shape_str(grid.shape()));
  }
  Tensor seq = matmul(flat, params.patch_embedding);
  if (config.image_pos_encoding) {
    seq = add(seq, positional_encoding(config.image_len(), config.d_model));
  }
  return maybe_dropout(seq, config, train_mode, rng);
}

ForwardResult decoder_forward(const Tensor& image_seq, const std::vector<int>& token_ids,
                              const ModelParams& params, const ModelConfig& config,
                              bool train_mode, Rng* rng) {
  if (image_seq.rank() != 2) {
    throw std::invalid_argument("decoder: expected [Li, d_model] image sequence, got " +
                                shape_str(image_seq.shape()));
  }
  return forward_impl(image_seq, token_ids, {token_ids.size()}, params, config, train_mode, rng);
}

ForwardResult decoder_forward_batch(const Tensor& image_seq, const std::vector<int>& token_ids,
                                    std::size_t batch, std::size_t len,
                                    const ModelParams& params, const ModelConfig& config,
                                    bool train_mode, Rng* rng) {
  if (image_seq.rank() != 3 || image_seq.shape()[0] != batch) {
    throw std::invalid_argument("decoder: expected [B, Li, d_model] image sequence, got " +
                                shape_str(image_seq.shape()));
  }
  if (token_ids.size() != batch * len) {
    throw std::invalid_argument("decoder: token grid size mismatch");
  }
  return forward_impl(image_seq, token_ids, {batch, len}, params, config, train_mode, rng);
}

// ---------------------------------------------------------------------------
// checkpoint serialization
// ---------------------------------------------------------------------------

namespace {

constexpr char kMagic[4] = {'R', 'C', 'K', 'T'};
constexpr std::uint8_t kVersion = 1;

class Writer {
 public:
  explicit Writer(const std::string& path) : out_(path, std::ios::binary), path_(path) {
    if (!out_) throw std::runtime_error("checkpoint: cannot open '" + path + "' for writing");
  }
  void bytes(const void* p, std::size_t n) {
    out_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
  }
  void u8(std::uint8_t v) { bytes(&v, 1); }
  void u32(std::uint32_t v) { bytes(&v, 4); }
  void u64(std::uint64_t v) { bytes(&v, 8); }
  void f32(float v) { bytes(&v, 4); }
  void finish() {
    out_.flush();
    if (!out_) throw std::runtime_error("checkpoint: write to '" + path_ + "' failed");
  }

 private:
  std::ofstream out_;
  std::string path_;
};

class Reader {
 public:
  explicit Reader(const std::string& path) : in_(path, std::ios::binary), path_(path) {
    if (!in_) throw std::runtime_error("checkpoint: cannot open '" + path + "'");
  }
  void bytes(void* p, std::size_t n) {
    in_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (in_.gcount() != static_cast<std::streamsize>(n)) {
      throw std::runtime_error("checkpoint '" + path_ + "': truncated at byte offset " +
                               std::to_string(offset_ + static_cast<std::size_t>(in_.gcount())));
    }
    offset_ += n;
  }
  std::uint8_t u8() { std::uint8_t v; bytes(&v, 1); return v; }
  std::uint32_t u32() { std::uint32_t v; bytes(&v, 4); return v; }
  std::uint64_t u64() { std::uint64_t v; bytes(&v, 8); return v; }
  float f32() { float v; bytes(&v, 4); return v; }
  std::size_t offset() const { return offset_; }
  const std::string& path() const { return path_; }

 private:
  std::ifstream in_;
  std::string path_;
  std::size_t offset_ = 0;
};

}  // namespace

void save_checkpoint(const std::string& path, const ModelConfig& config,
                     const ModelParams& params) {
  Writer w(path);
  w.bytes(kMagic, 4);
  w.u8(kVersion);
  w.u32(static_cast<std::uint32_t>(config.num_layers));
  w.u32(static_cast<std::uint32_t>(config.n_head));
  w.u32(static_cast<std::uint32_t>(config.d_model));
  w.u32(static_cast<std::uint32_t>(config.dff));
  w.u32(static_cast<std::uint32_t>(config.vocab_size));
  w.u32(static_cast<std::uint32_t>(config.max_len));
  w.u32(static_cast<std::uint32_t>(config.grid_h));
  w.u32(static_cast<std::uint32_t>(config.grid_w));
  w.u32(static_cast<std::uint32_t>(config.grid_c));
  w.f32(static_cast<float>(config.dropout));
  w.u8(config.image_pos_encoding ? 1 : 0);

  const auto named = named_params(params);
  w.u32(static_cast<std::uint32_t>(named.size()));
  for (const auto& [name, tensor] : named) {
    w.u32(static_cast<std::uint32_t>(name.size()));
    w.bytes(name.data(), name.size());
    w.u32(static_cast<std::uint32_t>(tensor.rank()));
    for (std::size_t d : tensor.shape()) w.u64(d);
    for (double v : tensor.data()) w.f32(static_cast<float>(v));
  }
  w.finish();
}

std::pair<ModelConfig, ModelParams> load_checkpoint(const std::string& path) {
  Reader r(path);
  char magic[4];
  r.bytes(magic, 4);
  if (std::memcmp(magic, kMagic, 4) != 0) {
    throw std::runtime_error("checkpoint '" + path + "': bad magic at byte offset 0");
  }
  const std::uint8_t version = r.u8();
  if (version != kVersion) {
    throw std::runtime_error("checkpoint '" + path + "': unsupported version " +
                             std::to_string(version));
  }

  ModelConfig config;
  config.num_layers = r.u32();
  config.n_head = r.u32();
  config.d_model = r.u32();
  config.dff = r.u32();
  config.vocab_size = r.u32();
  config.max_len = r.u32();
  config.grid_h = r.u32();
  config.grid_w = r.u32();
  config.grid_c = r.u32();
  config.dropout = static_cast<double>(r.f32());
  config.image_pos_encoding = r.u8() != 0;
  config.validate();

  ModelParams params = zero_params(config);
  auto named = named_params(params);
  const std::uint32_t count = r.u32();
  if (count != named.size()) {
    throw std::runtime_error("checkpoint '" + path + "': holds " + std::to_string(count) +
                             " tensors, config implies " + std::to_string(named.size()));
  }

  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t name_len = r.u32();
    std::string name(name_len, '\0');
    r.bytes(name.data(), name_len);
    if (name != named[i].first) {
      throw std::runtime_error("checkpoint '" + path + "': tensor '" + name + "' at byte offset " +
                               std::to_string(r.offset()) + ", expected '" + named[i].first + "'");
    }
    const std::uint32_t tensor_rank = r.u32();
    std::vector<std::size_t> shape(tensor_rank);
    for (auto& d : shape) d = static_cast<std::size_t>(r.u64());
    if (shape != named[i].second.shape()) {
      throw std::runtime_error("checkpoint '" + path + "': tensor '" + name + "' has shape " +
                               shape_str(shape) + ", config implies " +
                               shape_str(named[i].second.shape()));
    }
    for (double& v : named[i].second.data()) v = static_cast<double>(r.f32());
  }
  return {config, std::move(params)};
}

}  // namespace rgen
