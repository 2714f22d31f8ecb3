#include "unimov/align.hpp"

#include "unimov/errors.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>

namespace unimov::align {

namespace {

std::vector<std::string> tokenize(const std::string& text) {
  std::vector<std::string> tokens;
  std::string current;
  for (char ch : text) {
    if (std::isalnum(static_cast<unsigned char>(ch))) {
      current.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
    } else if (!current.empty()) {
      tokens.push_back(current);
      current.clear();
    }
  }
  if (!current.empty()) tokens.push_back(current);
  return tokens;
}

Eigen::RowVectorXd unit_or_e1(Eigen::RowVectorXd v) {
  const double n = v.norm();
  if (n < 1e-12) {
    v.setZero();
    v(0) = 1.0;
    return v;
  }
  return v / n;
}

}  // namespace

Eigen::RowVectorXd stub_text_encoder(const std::string& text, Eigen::Index d, std::uint64_t seed) {
  if (d < 1) throw ParameterError("text encoder needs a positive dimension");
  const auto tokens = tokenize(text);
  if (tokens.empty()) throw ParameterError("text encoder needs non-empty text");

  Eigen::RowVectorXd sum = Eigen::RowVectorXd::Zero(d);
  for (const auto& token : tokens) {
    Rng rng(mix_seed(seed, "text-token:" + token));
    Eigen::RowVectorXd v(d);
    for (Eigen::Index i = 0; i < d; ++i) v(i) = rng.normal();
    sum += unit_or_e1(std::move(v));
  }
  return unit_or_e1(std::move(sum));
}

Eigen::RowVectorXd stub_image_encoder(const scene::Image& image, Eigen::Index d,
                                      std::uint64_t seed) {
  if (d < 1) throw ParameterError("image encoder needs a positive dimension");
  if (image.h < 1 || image.w < 1) throw ParameterError("image encoder needs a non-empty image");

  // 4x4 grid of mean colors captures palette and coarse layout.
  constexpr Eigen::Index kGrid = 4;
  Eigen::RowVectorXd feat = Eigen::RowVectorXd::Zero(kGrid * kGrid * 3);
  Eigen::RowVectorXd count = Eigen::RowVectorXd::Zero(kGrid * kGrid);
  for (Eigen::Index r = 0; r < image.h; ++r) {
    for (Eigen::Index c = 0; c < image.w; ++c) {
      const Eigen::Index gr = std::min(kGrid - 1, r * kGrid / image.h);
      const Eigen::Index gc = std::min(kGrid - 1, c * kGrid / image.w);
      const Eigen::Index cell = gr * kGrid + gc;
      for (int ch = 0; ch < 3; ++ch)
        feat(cell * 3 + ch) += static_cast<double>(image.at(r, c, ch)) / 255.0;
      count(cell) += 1.0;
    }
  }
  for (Eigen::Index cell = 0; cell < kGrid * kGrid; ++cell)
    if (count(cell) > 0.0)
      for (int ch = 0; ch < 3; ++ch) feat(cell * 3 + ch) /= count(cell);

  Rng rng(mix_seed(seed, "image-proj"));
  Eigen::MatrixXd proj(feat.size(), d);
  for (Eigen::Index r = 0; r < proj.rows(); ++r)
    for (Eigen::Index c = 0; c < proj.cols(); ++c) proj(r, c) = rng.normal();
  Eigen::RowVectorXd v = (feat * proj).array().tanh();
  return unit_or_e1(std::move(v));
}

EncoderProvider make_provider(const std::string& provider_id, Eigen::Index d,
                              std::uint64_t seed) {
  if (provider_id != "stub-v1")
    throw ParameterError("unknown encoder provider: " + provider_id);
  EncoderProvider p;
  p.provider_id = provider_id;
  p.dim = d;
  p.text_encode = [d, seed](const std::string& text) { return stub_text_encoder(text, d, seed); };
  p.image_encode = [d, seed](const scene::Image& img) { return stub_image_encoder(img, d, seed); };
  return p;
}

void DepthEncoderConfig::validate() const {
  if (patch_size < 1) throw ParameterError("depth patch size must be positive");
}

DepthEncoder::DepthEncoder(ParamStore& store, const DepthEncoderConfig& cfg, Eigen::Index d_model,
                           Eigen::Index out_dim, std::uint64_t init_seed)
    : cfg_(cfg), d_model_(d_model), out_dim_(out_dim) {
  cfg_.validate();
  if (d_model < 1 || out_dim < 1) throw ParameterError("depth encoder dimensions must be positive");
  const Eigen::Index patch_len = cfg_.patch_size * cfg_.patch_size;
  Rng r(mix_seed(init_seed, "depth"));
  patch_w_ = &store.create("depth.patch.w", nn::glorot(r, patch_len, d_model));
  patch_b_ = &store.create("depth.patch.b", ad::Mat::Zero(1, d_model));
  pos_w_ = &store.create("depth.pos.w", nn::glorot(r, 2, d_model));
  mixer_ = std::make_unique<nn::TokenBlock>(store, "depth.mixer", d_model, r);
  main_w_ = &store.create("depth.main.w", nn::glorot(r, d_model, out_dim));
  main_b_ = &store.create("depth.main.b", ad::Mat::Zero(1, out_dim));
  aux_w_ = &store.create("depth.aux.w", nn::glorot(r, d_model, out_dim));
  gate_ = &store.create("depth.gate", ad::Mat::Constant(1, 1, cfg_.gate_init));
}

DepthEmbedding DepthEncoder::encode(Tape& t, const Eigen::MatrixXd& depth) const {
  if (!cfg_.trainable) {
    // Frozen tower: evaluate on a private tape and surface a constant.
    Tape local;
    DepthEmbedding inner = encode_impl(local, depth);
    DepthEmbedding out;
    out.all_zero = inner.all_zero;
    out.embedding = t.constant(inner.embedding.value());
    return out;
  }
  return encode_impl(t, depth);
}

DepthEmbedding DepthEncoder::encode_impl(Tape& t, const Eigen::MatrixXd& depth) const {
  if (depth.rows() < 1 || depth.cols() < 1) throw ParameterError("depth map must be non-empty");
  if (!depth.allFinite() || (depth.array() < 0.0).any())
    throw NumericError("depth map must be finite and non-negative");

  DepthEmbedding out;
  const double peak = depth.maxCoeff();
  out.all_zero = peak <= 0.0;
  if (out.all_zero)
    std::fprintf(stderr, "unimov: all-zero depth map; emitting the null depth embedding\n");

  // Normalize by scene maximum, pad so the patch size divides both sides.
  Eigen::MatrixXd norm = out.all_zero ? depth : (depth / peak).eval();
  const Eigen::Index ps = cfg_.patch_size;
  const Eigen::Index ph = (norm.rows() + ps - 1) / ps;
  const Eigen::Index pw = (norm.cols() + ps - 1) / ps;
  Eigen::MatrixXd padded = Eigen::MatrixXd::Zero(ph * ps, pw * ps);
  padded.topLeftCorner(norm.rows(), norm.cols()) = norm;

  const Eigen::Index n_tokens = ph * pw;
  ad::Mat patches(n_tokens, ps * ps);
  ad::Mat coords(n_tokens, 2);
  for (Eigen::Index pr = 0; pr < ph; ++pr) {
    for (Eigen::Index pc = 0; pc < pw; ++pc) {
      const Eigen::Index tok = pr * pw + pc;
      Eigen::MatrixXd block = padded.block(pr * ps, pc * ps, ps, ps);
      for (Eigen::Index i = 0; i < ps; ++i)
        for (Eigen::Index j = 0; j < ps; ++j) patches(tok, i * ps + j) = block(i, j);
      coords(tok, 0) = ph > 1 ? static_cast<double>(pr) / static_cast<double>(ph - 1) : 0.0;
      coords(tok, 1) = pw > 1 ? static_cast<double>(pc) / static_cast<double>(pw - 1) : 0.0;
    }
  }

  Var tokens = t.add_rowvec(t.matmul(t.constant(patches), t.param(*patch_w_)),
                            t.param(*patch_b_));
  tokens = t.add(tokens, t.matmul(t.constant(coords), t.param(*pos_w_)));

  Var pool_weights =
      t.constant(ad::Mat::Constant(1, n_tokens, 1.0 / static_cast<double>(n_tokens)));
  Var pooled_main = t.matmul(pool_weights, mixer_->apply(t, tokens));
  Var main = t.add_rowvec(t.matmul(pooled_main, t.param(*main_w_)), t.param(*main_b_));

  // Auxiliary aggregation: pooled raw patch embeddings behind the gate.
  Var pooled_aux = t.matmul(pool_weights, tokens);
  Var aux = t.matmul(pooled_aux, t.param(*aux_w_));
  Var combined = t.add(main, t.mul_scalar(aux, t.param(*gate_)));
  out.embedding = t.rows_l2_normalize(combined);
  return out;
}

ProjectionHead::ProjectionHead(ParamStore& store, const std::string& prefix, Eigen::Index in,
                               Eigen::Index out, std::uint64_t init_seed) {
  Rng r(mix_seed(init_seed, prefix));
  mlp_ = std::make_unique<nn::Mlp>(store, prefix, in, (in + out) / 2 + 1, out, r);
}

Var ProjectionHead::apply(Tape& t, Var feats) const {
  return t.rows_l2_normalize(mlp_->apply(t, feats));
}

namespace {

Var ensure_unit_rows(Tape& t, Var feats, const char* who) {
  const ad::Mat& v = feats.value();
  double worst = 0.0;
  for (Eigen::Index r = 0; r < v.rows(); ++r)
    worst = std::max(worst, std::fabs(v.row(r).norm() - 1.0));
  if (worst <= 1e-5) return feats;
  std::fprintf(stderr, "unimov: %s received non-normalized rows (max |norm-1| = %.3g); normalizing\n",
               who, worst);
  return t.rows_l2_normalize(feats);
}

}  // namespace

Var symmetric_contrastive(Tape& t, Var a, Var b, const Temperature& eps) {
  if (a.rows() < 1) throw ParameterError("symmetric_contrastive needs at least one pair");
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw ParameterError("symmetric_contrastive: batch shapes must match");

  Var an = ensure_unit_rows(t, a, "symmetric_contrastive");
  Var bn = ensure_unit_rows(t, b, "symmetric_contrastive");
  Var logits = t.mul_scalar(t.matmul(an, t.transpose(bn)), eps.inverse(t));
  Var diag = t.take_diag(logits);
  Var row_term = t.mean(t.sub(t.row_logsumexp(logits), diag));
  Var col_term = t.mean(t.sub(t.row_logsumexp(t.transpose(logits)), diag));
  return t.scale(t.add(row_term, col_term), 0.5);
}

double overall_loss(double l_pi, double l_pd, double l_di, double l_capt_total) {
  return l_pi + l_pd + l_di + l_capt_total;
}

Var overall_loss(Tape& t, Var l_pi, Var l_pd, Var l_di, Var l_capt_total) {
  return t.add(t.add(l_pi, l_pd), t.add(l_di, l_capt_total));
}

}  // namespace unimov::align
