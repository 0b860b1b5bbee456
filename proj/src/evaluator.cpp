#include "garden/evaluator.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

#include "garden/adam.hpp"
#include "garden/errors.hpp"

namespace garden {

using nlohmann::json;

namespace {

constexpr ops::Conv2dGeometry kSame{1, 1, 0};
constexpr ops::Conv2dGeometry kHalve{2, 0, 1};

std::size_t final_side(const EvaluatorConfig& c) { return c.image_side >> (c.image_channels.size() - 1); }

ModelConfig text_config(const EvaluatorConfig& c) {
  ModelConfig m;
  m.context_length = c.context_length;
  m.text_dim = c.text_dim;
  m.text_blocks = c.text_blocks;
  return m;
}

}  // namespace

void EvaluatorConfig::validate() const {
  if (image_channels.empty()) throw ConfigError("evaluator: image_channels must not be empty");
  for (std::size_t c : image_channels) {
    if (c == 0) throw ConfigError("evaluator: image channel counts must be >= 1");
  }
  const std::size_t halvings = image_channels.size() - 1;
  if (image_side == 0 || halvings >= 16 || image_side % (std::size_t{1} << halvings) != 0) {
    throw ConfigError("evaluator: image_side " + std::to_string(image_side) + " cannot be halved " +
                      std::to_string(halvings) + " times");
  }
  if (context_length < 2) throw ConfigError("evaluator: context_length must be >= 2");
  if (text_dim == 0 || text_dim % 2 != 0) throw ConfigError("evaluator: text_dim must be even and >= 2");
  if (embed_dim == 0) throw ConfigError("evaluator: embed_dim must be >= 1");
  if (!(init_temperature > 0.0) || !std::isfinite(init_temperature)) {
    throw ConfigError("evaluator: init_temperature must be positive");
  }
}

nlohmann::json to_json(const EvaluatorConfig& c) {
  return {{"image_side", c.image_side},   {"image_channels", c.image_channels}, {"context_length", c.context_length},
          {"text_dim", c.text_dim},       {"text_blocks", c.text_blocks},       {"embed_dim", c.embed_dim},
          {"init_temperature", c.init_temperature}};
}

void merge_json(const nlohmann::json& j, EvaluatorConfig& c) {
  if (!j.is_object()) throw ConfigError("evaluator config must be a JSON object");
  try {
    for (const auto& [key, v] : j.items()) {
      if (key == "image_side") c.image_side = v.get<std::size_t>();
      else if (key == "image_channels") c.image_channels = v.get<std::vector<std::size_t>>();
      else if (key == "context_length") c.context_length = v.get<std::size_t>();
      else if (key == "text_dim") c.text_dim = v.get<std::size_t>();
      else if (key == "text_blocks") c.text_blocks = v.get<std::size_t>();
      else if (key == "embed_dim") c.embed_dim = v.get<std::size_t>();
      else if (key == "init_temperature") c.init_temperature = v.get<double>();
      else throw ConfigError("unknown evaluator config key '" + key + "'");
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("evaluator config: ") + e.what());
  }
}

// ------------------------------------------------------------ dual encoder

template <typename T>
DualEncoder<T>::DualEncoder(const EvaluatorConfig& cfg, Vocabulary vocabulary, std::uint64_t seed)
    : config(cfg), vocab(std::move(vocabulary)) {
  config.validate();
  Rng rng(seed);
  const auto& ch = config.image_channels;
  convs_.push_back(std::make_unique<Conv2d<T>>(registry, "image.conv0", 3, ch[0], 3, kSame, rng));
  for (std::size_t i = 1; i < ch.size(); ++i) {
    convs_.push_back(
        std::make_unique<Conv2d<T>>(registry, "image.conv" + std::to_string(i), ch[i - 1], ch[i], 3, kHalve, rng));
  }
  const std::size_t side = final_side(config);
  image_proj_ = std::make_unique<Linear<T>>(registry, "image.proj", ch.back() * side * side, config.embed_dim, true, rng);
  text_ = std::make_unique<TextEncoder<T>>(registry, "text.", vocab.size(), text_config(config), rng);
  text_proj_ = std::make_unique<Linear<T>>(registry, "text.proj", config.context_length * config.text_dim,
                                           config.embed_dim, true, rng);
  logit_scale_ = registry.params.add(
      "logit_scale", Tensor<T>({1}, std::vector<T>{static_cast<T>(std::log(1.0 / config.init_temperature))}));
}

template <typename T>
Var<T> DualEncoder<T>::encode_image(const Tensor<T>& image) const {
  const Shape expected{3, config.image_side, config.image_side};
  if (image.shape() != expected) {
    throw DimensionError("evaluator expects images of shape " + shape_str(expected) + ", got " +
                         shape_str(image.shape()));
  }
  Var<T> h(image);
  for (const auto& conv : convs_) h = ops::silu((*conv)(h));
  return (*image_proj_)(ops::reshape(h, {1, h.size()}));
}

template <typename T>
Var<T> DualEncoder<T>::encode_images(const std::vector<Tensor<T>>& images) const {
  if (images.empty()) throw DimensionError("encode_images: no images");
  std::vector<Var<T>> rows;
  for (const auto& img : images) rows.push_back(ops::reshape(encode_image(img), {config.embed_dim}));
  return ops::l2_normalize_rows(ops::stack(rows));
}

template <typename T>
Var<T> DualEncoder<T>::encode_texts(const std::vector<std::string>& captions) const {
  if (captions.empty()) throw DimensionError("encode_texts: no captions");
  std::vector<Var<T>> rows;
  for (const auto& c : captions) {
    const Var<T> h = (*text_)(tokenize(c, vocab, config.context_length));
    rows.push_back(ops::reshape((*text_proj_)(ops::reshape(h, {1, h.size()})), {config.embed_dim}));
  }
  return ops::l2_normalize_rows(ops::stack(rows));
}

template <typename T>
Var<T> contrastive_loss(const Var<T>& image_emb, const Var<T>& text_emb, const Var<T>& logit_scale) {
  if (image_emb.shape() != text_emb.shape() || image_emb.shape().size() != 2) {
    throw DimensionError("contrastive_loss: embeddings " + shape_str(image_emb.shape()) + " and " +
                         shape_str(text_emb.shape()) + " must be equal [B x d]");
  }
  const std::size_t b = image_emb.shape()[0];
  std::vector<std::size_t> targets(b);
  for (std::size_t i = 0; i < b; ++i) targets[i] = i;
  const Var<T> logits = ops::scale_by(ops::matmul(image_emb, ops::transpose(text_emb)), ops::exp(logit_scale));
  return ops::scale(ops::add(ops::cross_entropy_rows(logits, targets),
                             ops::cross_entropy_rows(ops::transpose(logits), targets)),
                    T(0.5));
}

double cosine_similarity(const std::vector<float>& u, const std::vector<float>& v) {
  if (u.size() != v.size() || u.empty()) {
    throw DimensionError("cosine_similarity: lengths " + std::to_string(u.size()) + " and " + std::to_string(v.size()));
  }
  double dot = 0.0, uu = 0.0, vv = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    dot += static_cast<double>(u[i]) * v[i];
    uu += static_cast<double>(u[i]) * u[i];
    vv += static_cast<double>(v[i]) * v[i];
  }
  if (std::abs(std::sqrt(uu) - 1.0) > 1e-6 || std::abs(std::sqrt(vv) - 1.0) > 1e-6) {
    throw NumericsError("cosine_similarity: inputs must be unit vectors (norms " + std::to_string(std::sqrt(uu)) +
                        ", " + std::to_string(std::sqrt(vv)) + ")");
  }
  // sqrt(fl(d * d)) == d, so u == v yields exactly 1.
  return std::clamp(dot / std::sqrt(uu * vv), -1.0, 1.0);
}

// --------------------------------------------------------------- training

namespace {

std::vector<float> row(const Tensor<float>& m, std::size_t i) {
  const std::size_t d = m.shape()[1];
  return std::vector<float>(m.vec().begin() + static_cast<long>(i * d), m.vec().begin() + static_cast<long>((i + 1) * d));
}

std::vector<Tensor<float>> tensors_of(const std::vector<ImageTensor>& images) {
  std::vector<Tensor<float>> out;
  out.reserve(images.size());
  for (const auto& img : images) out.push_back(img.tensor<float>());
  return out;
}

SimilarityStats stats_of(const std::vector<double>& xs) {
  SimilarityStats s;
  s.min = *std::min_element(xs.begin(), xs.end());
  s.max = *std::max_element(xs.begin(), xs.end());
  double sum = 0.0;
  for (double x : xs) sum += x;
  s.mean = sum / static_cast<double>(xs.size());
  return s;
}

}  // namespace

EvaluatorTrainResult contrastive_train(const LoadedDataset& data, const EvaluatorConfig& config,
                                       const EvaluatorTrainConfig& tc) {
  if (tc.steps == 0 || tc.batch_size < 2) throw ConfigError("evaluator training needs steps >= 1 and batch_size >= 2");
  if (data.records.size() != data.images.size()) throw DimensionError("evaluator training: records and images differ");
  std::set<std::string> distinct;
  for (const auto& r : data.records) distinct.insert(r.caption);
  if (distinct.size() < 2) throw ConfigError("evaluator training needs at least 2 distinct captions");

  EvaluatorTrainResult result;
  const Split split = split_indices(data.records.size(), tc.validation_fraction, tc.seed);
  result.train_indices = split.train;
  result.validation_indices = split.validation;
  std::vector<std::string> train_captions;
  for (std::size_t i : split.train) train_captions.push_back(data.records[i].caption);
  result.encoder = std::make_unique<DualEncoder<float>>(config, Vocabulary::build(train_captions), derive_seed(tc.seed, 21));
  auto& enc = *result.encoder;

  AdamState<float> adam;
  adam.config.lr = tc.lr;
  const std::size_t n = split.train.size();
  std::vector<std::size_t> perm;
  std::size_t cached_epoch = std::numeric_limits<std::size_t>::max();
  for (std::size_t step = 0; step < tc.steps; ++step) {
    std::vector<Tensor<float>> images;
    std::vector<std::string> captions;
    std::set<std::string> seen;
    for (std::size_t j = 0; j < tc.batch_size; ++j) {
      const std::size_t g = step * tc.batch_size + j;
      if (g / n != cached_epoch) {
        cached_epoch = g / n;
        perm = Rng(derive_seed(tc.seed, 2000 + cached_epoch)).permutation(n);
      }
      const std::size_t idx = split.train[perm[g % n]];
      if (!seen.insert(data.records[idx].caption).second) continue;
      images.push_back(data.images[idx].tensor<float>());
      captions.push_back(data.records[idx].caption);
    }
    if (captions.size() < 2) {
      ++result.skipped_batches;
      continue;
    }
    enc.registry.params.zero_grad();
    const Var<float> loss = contrastive_loss(enc.encode_images(images), enc.encode_texts(captions), enc.logit_scale());
    if (!std::isfinite(loss.item())) {
      throw NumericsError("evaluator training: non-finite loss at step " + std::to_string(step + 1));
    }
    loss.backward();
    adam_step(enc.registry.params, adam);
    result.losses.push_back(loss.item());
  }
  return result;
}

// ------------------------------------------------------------- evaluation

RetrievalReport retrieval_eval(const DualEncoder<float>& encoder, const std::vector<ImageTensor>& images,
                               const std::vector<std::string>& captions, std::size_t distractors, std::uint64_t seed) {
  if (images.size() != captions.size() || images.size() < 2) {
    throw DimensionError("retrieval_eval: need matching image and caption counts (>= 2), got " +
                         std::to_string(images.size()) + " and " + std::to_string(captions.size()));
  }
  std::vector<std::string> distinct;
  {
    std::set<std::string> s(captions.begin(), captions.end());
    distinct.assign(s.begin(), s.end());
  }
  if (distinct.size() < distractors + 1) {
    throw ConfigError("retrieval_eval: split has " + std::to_string(distinct.size()) + " distinct captions, need " +
                      std::to_string(distractors + 1));
  }
  NoGradGuard guard;
  const Tensor<float> img = encoder.encode_images(tensors_of(images)).value();
  const Tensor<float> txt = encoder.encode_texts(distinct).value();
  auto caption_row = [&](const std::string& c) {
    return static_cast<std::size_t>(std::lower_bound(distinct.begin(), distinct.end(), c) - distinct.begin());
  };

  Rng rng(seed);
  RetrievalReport rep;
  rep.queries = images.size();
  rep.distractors = distractors;
  std::size_t hits = 0;
  double matched = 0.0;
  for (std::size_t i = 0; i < images.size(); ++i) {
    const auto u = row(img, i);
    const std::size_t own = caption_row(captions[i]);
    const double own_cos = cosine_similarity(u, row(txt, own));
    matched += own_cos;
    std::vector<std::size_t> pool;
    for (std::size_t k = 0; k < distinct.size(); ++k)
      if (k != own) pool.push_back(k);
    const auto order = rng.permutation(pool.size());
    bool best = true;
    for (std::size_t k = 0; k < distractors; ++k) {
      if (cosine_similarity(u, row(txt, pool[order[k]])) >= own_cos) best = false;
    }
    hits += best ? 1 : 0;
  }
  // Sattolo's shuffle yields a single cycle, hence no fixed points.
  std::vector<std::size_t> sigma(images.size());
  for (std::size_t i = 0; i < sigma.size(); ++i) sigma[i] = i;
  for (std::size_t i = sigma.size() - 1; i > 0; --i) std::swap(sigma[i], sigma[rng.below(i)]);
  double deranged = 0.0;
  for (std::size_t i = 0; i < images.size(); ++i) {
    deranged += cosine_similarity(row(img, i), row(txt, caption_row(captions[sigma[i]])));
  }
  const double n = static_cast<double>(images.size());
  rep.top1 = static_cast<double>(hits) / n;
  rep.matched_mean = matched / n;
  rep.deranged_mean = deranged / n;
  return rep;
}

SimilarityReport evaluate(const DualEncoder<float>& encoder, const std::vector<ImageTensor>& images,
                          const std::vector<std::string>& image_ids, const std::vector<std::string>& prompts,
                          const std::vector<ImageTensor>* references) {
  if (images.size() != prompts.size() || images.size() != image_ids.size()) {
    throw DimensionError("evaluate: " + std::to_string(images.size()) + " images but " + std::to_string(prompts.size()) +
                         " prompts");
  }
  if (references && references->size() != images.size()) {
    throw DimensionError("evaluate: " + std::to_string(images.size()) + " images but " +
                         std::to_string(references->size()) + " references");
  }
  if (images.empty()) throw DimensionError("evaluate: nothing to evaluate");
  NoGradGuard guard;
  const Tensor<float> img = encoder.encode_images(tensors_of(images)).value();
  const Tensor<float> txt = encoder.encode_texts(prompts).value();
  Tensor<float> ref;
  if (references) ref = encoder.encode_images(tensors_of(*references)).value();

  SimilarityReport rep;
  std::vector<double> ti, ii;
  for (std::size_t i = 0; i < images.size(); ++i) {
    SimilarityRecord r;
    r.prompt = prompts[i];
    r.image = image_ids[i];
    r.text_image_cos = cosine_similarity(row(img, i), row(txt, i));
    ti.push_back(r.text_image_cos);
    if (references) {
      r.image_image_cos = cosine_similarity(row(img, i), row(ref, i));
      ii.push_back(*r.image_image_cos);
    }
    rep.records.push_back(std::move(r));
  }
  rep.text_image = stats_of(ti);
  if (references) rep.image_image = stats_of(ii);
  return rep;
}

nlohmann::json to_json(const SimilarityReport& rep) {
  json records = json::array();
  for (const auto& r : rep.records) {
    json j{{"prompt", r.prompt}, {"image", r.image}, {"text_image_cos", r.text_image_cos}};
    if (r.image_image_cos) j["image_image_cos"] = *r.image_image_cos;
    records.push_back(std::move(j));
  }
  auto stats = [](const SimilarityStats& s) { return json{{"mean", s.mean}, {"min", s.min}, {"max", s.max}}; };
  json aggregate{{"count", rep.records.size()}, {"text_image_cos", stats(rep.text_image)}};
  if (rep.image_image) aggregate["image_image_cos"] = stats(*rep.image_image);
  return {{"records", records}, {"aggregate", aggregate}};
}

void save_evaluator(const std::filesystem::path& path, const DualEncoder<float>& encoder) {
  Checkpoint c;
  c.stage = "evaluator";
  c.config = to_json(encoder.config);
  c.vocab = encoder.vocab.tokens();
  capture_parameters(encoder.registry.params, AdamState<float>{}, c);
  save_checkpoint(path, c);
}

std::unique_ptr<DualEncoder<float>> load_evaluator(const std::filesystem::path& path) {
  const Checkpoint c = load_checkpoint(path);
  if (c.stage != "evaluator") throw ConfigError(path.string() + " is a " + c.stage + " checkpoint, not an evaluator");
  EvaluatorConfig cfg;
  merge_json(c.config, cfg);
  auto enc = std::make_unique<DualEncoder<float>>(cfg, Vocabulary(c.vocab), 0);
  AdamState<float> unused;
  restore_parameters(c, enc->registry.params, unused);
  return enc;
}

template class DualEncoder<float>;
template class DualEncoder<double>;
template Var<float> contrastive_loss(const Var<float>&, const Var<float>&, const Var<float>&);
template Var<double> contrastive_loss(const Var<double>&, const Var<double>&, const Var<double>&);

}  // namespace garden
