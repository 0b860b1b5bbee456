#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "garden/checkpoint.hpp"
#include "garden/dataset.hpp"
#include "garden/networks.hpp"
#include "json.hpp"

namespace garden {

struct EvaluatorConfig {
  std::size_t image_side = 32;
  std::vector<std::size_t> image_channels{16, 32, 32, 32};  // first at full size, each later one halves
  std::size_t context_length = 16;
  std::size_t text_dim = 32;
  std::size_t text_blocks = 1;
  std::size_t embed_dim = 32;            // d_emb
  double init_temperature = 0.07;

  /// Throws ConfigError on inconsistent sizes.
  void validate() const;
};

nlohmann::json to_json(const EvaluatorConfig& cfg);
void merge_json(const nlohmann::json& j, EvaluatorConfig& cfg);

/// CLIP-style pair of encoders into a shared unit sphere. The temperature is
/// learned through its log inverse ("logit_scale").
template <typename T>
class DualEncoder {
 public:
  DualEncoder(const EvaluatorConfig& config, Vocabulary vocabulary, std::uint64_t seed);
  DualEncoder(const DualEncoder&) = delete;
  DualEncoder& operator=(const DualEncoder&) = delete;

  /// [3 x S x S] images -> [B x d_emb], unit rows.
  Var<T> encode_images(const std::vector<Tensor<T>>& images) const;
  /// Captions -> [B x d_emb], unit rows.
  Var<T> encode_texts(const std::vector<std::string>& captions) const;

  const Var<T>& logit_scale() const { return logit_scale_; }
  double temperature() const { return std::exp(-static_cast<double>(logit_scale_.value()[0])); }

  EvaluatorConfig config;
  Vocabulary vocab;
  Registry<T> registry;

 private:
  Var<T> encode_image(const Tensor<T>& image) const;

  std::vector<std::unique_ptr<Conv2d<T>>> convs_;
  std::unique_ptr<Linear<T>> image_proj_;
  std::unique_ptr<TextEncoder<T>> text_;
  std::unique_ptr<Linear<T>> text_proj_;
  Var<T> logit_scale_;
};

/// Symmetric in-batch contrastive loss: the mean of image->text and
/// text->image cross-entropy over logits exp(logit_scale) * I T^T, where
/// row i of each embedding matrix belongs to pair i.
template <typename T>
Var<T> contrastive_loss(const Var<T>& image_emb, const Var<T>& text_emb, const Var<T>& logit_scale);

/// Dot product of two unit vectors in double, divided by the product of
/// their norms and clamped to [-1, 1]; identical inputs give exactly 1.
/// DimensionError on a length mismatch, NumericsError when a norm is off
/// unit by more than 1e-6.
double cosine_similarity(const std::vector<float>& u, const std::vector<float>& v);

struct EvaluatorTrainConfig {
  std::size_t steps = 400;
  std::size_t batch_size = 32;
  double lr = 2e-3;
  double validation_fraction = 0.2;
  std::uint64_t seed = 0;
};

struct EvaluatorTrainResult {
  std::unique_ptr<DualEncoder<float>> encoder;
  std::vector<double> losses;            // one per optimizer step
  std::size_t skipped_batches = 0;       // batches with fewer than two distinct captions
  std::vector<std::size_t> train_indices;
  std::vector<std::size_t> validation_indices;
};

/// Trains on the training split of `data`. Within a batch only the first
/// occurrence of each caption is kept so no pair is its own negative; a
/// batch left with fewer than two pairs is skipped and counted.
EvaluatorTrainResult contrastive_train(const LoadedDataset& data, const EvaluatorConfig& config,
                                       const EvaluatorTrainConfig& train);

struct RetrievalReport {
  std::size_t queries = 0;
  std::size_t distractors = 0;
  double top1 = 0.0;            // fraction of images whose caption beats every distractor
  double matched_mean = 0.0;    // mean cos(image_i, caption_i)
  double deranged_mean = 0.0;   // mean cos(image_i, caption_sigma(i)), sigma a seeded derangement
};

/// For each image, ranks its caption against `distractors` other distinct
/// captions drawn (seeded) from the same split. ConfigError when the split
/// has too few distinct captions.
RetrievalReport retrieval_eval(const DualEncoder<float>& encoder, const std::vector<ImageTensor>& images,
                               const std::vector<std::string>& captions, std::size_t distractors,
                               std::uint64_t seed);

struct SimilarityRecord {
  std::string prompt;
  std::string image;
  double text_image_cos = 0.0;
  std::optional<double> image_image_cos;
};

struct SimilarityStats {
  double mean = 0.0;
  double min = 0.0;
  double max = 0.0;
};

struct SimilarityReport {
  std::vector<SimilarityRecord> records;
  SimilarityStats text_image;
  std::optional<SimilarityStats> image_image;
};

/// Scores generated images against their prompts and, when given, against
/// reference images. DimensionError when the counts differ.
SimilarityReport evaluate(const DualEncoder<float>& encoder, const std::vector<ImageTensor>& images,
                          const std::vector<std::string>& image_ids, const std::vector<std::string>& prompts,
                          const std::vector<ImageTensor>* references = nullptr);

/// `{"records": [...], "aggregate": {...}}` with the record fields prompt,
/// image, text_image_cos and image_image_cos.
nlohmann::json to_json(const SimilarityReport& report);

/// Evaluator weights in the checkpoint container, stage "evaluator".
void save_evaluator(const std::filesystem::path& path, const DualEncoder<float>& encoder);
std::unique_ptr<DualEncoder<float>> load_evaluator(const std::filesystem::path& path);

}  // namespace garden
