#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "seldlab/features.hpp"
#include "seldlab/metrics.hpp"
#include "seldlab/model.hpp"
#include "seldlab/scene.hpp"

namespace seldlab::meta {

enum class Method { seld, meta, meta_pp, env_adaptive };
Method method_from_string(const std::string& s);
std::string to_string(Method m);

struct MetaConfig {
    int K = 30;               // support samples per episode
    int room_batch = 9;       // environments per epoch (all, sampled without replacement)
    int sample_batch = 128;   // clips per episode (support + query)
    int inner_steps = 5;      // N
    double inner_lr = 0.001;  // adaptation rate (SGD)
    double outer_lr = 0.0003; // meta step size (AdamW)
    int epochs = 10;
    uint64_t seed = 0;
    Method method = Method::meta_pp;
    model::AttnInput attenuation_input = model::AttnInput::representations;
    bool attenuation_bypass = false;
    bool skip_extractor = false;
    double weight_decay = 0.0;
    double bn_momentum = 0.01;
    double pooled_stat_momentum = 0.05;  // extractor input standardization
    int embed_dim = 2048;   // environment representation dimension D
    int attn_hidden = 1024;
    float attn_output_bias = 2.0f;  // start the attenuation near identity
    double decode_threshold = 0.5;
    // stepped decay mirroring the paper's schedule shape
    double lr_decay_start_frac = 0.6;
    double lr_decay_every_frac = 0.2;
    double lr_decay_factor = 0.9;
};

struct SupervisedConfig {
    int epochs = 20;
    double lr = 0.001;
    int batch_size = 16;
    uint64_t seed = 0;
    double weight_decay = 0.0;
    double bn_momentum = 0.01;
    double lr_decay_start_frac = 0.75;
    double lr_decay_every_frac = 0.125;
    double lr_decay_factor = 0.9;
};

double scheduled_lr(double base, int epoch, int total_epochs, double start_frac, double every_frac,
                    double factor);

// One environment's episode: disjoint support and query stacks.
struct EpisodeBatch {
    std::string env_id;
    nn::Tensor<float> sx, st;  // [K,C,T,F], [K,T',3M]
    nn::Tensor<float> qx, qt;
};

// Manifest-backed feature/label store with a disk cache and in-RAM memoization.
class DataStore {
  public:
    DataStore(scene::DatasetManifest manifest, model::BackboneConfig cfg,
              std::filesystem::path cache_dir);

    const scene::DatasetManifest& manifest() const { return manifest_; }
    const model::BackboneConfig& backbone_config() const { return cfg_; }
    int num_clips() const { return int(manifest_.clips.size()); }

    const feat::FeatureTensor& features(int clip) const;
    const std::vector<model::LabelFrame>& labels(int clip) const;

    nn::Tensor<float> stack_features(const std::vector<int>& clips) const;
    nn::Tensor<float> stack_targets(const std::vector<int>& clips) const;

  private:
    scene::DatasetManifest manifest_;
    model::BackboneConfig cfg_;
    std::filesystem::path cache_dir_;
    mutable std::vector<std::optional<feat::FeatureTensor>> feat_cache_;
    mutable std::vector<std::optional<std::vector<model::LabelFrame>>> label_cache_;
    feat::FeatureExtractor extractor_;
};

// ---------------------------------------------------------------------------

struct TrainLog {
    std::vector<double> epoch_loss;
};

// Conventional supervised training of the backbone (the EI model).
nn::ParamSet<float> train_supervised(const DataStore& store, const model::BackboneConfig& cfg,
                                     const SupervisedConfig& scfg, TrainLog* log = nullptr);

// One episode per environment per epoch; environments visited as a seeded
// permutation without replacement; support/query disjoint.
std::vector<EpisodeBatch> sample_episodes(const DataStore& store, const MetaConfig& cfg, Rng& rng);

struct InnerResult {
    nn::ParamSet<float> adapted;
    std::vector<double> support_losses;  // loss evaluated before each of the N updates
    std::vector<nn::Tensor<float>> first_bn_mean, first_bn_var;
};

// N SGD steps on the support loss from theta_init; theta_init untouched, BN
// running statistics frozen (train-mode normalization via batch statistics).
InnerResult inner_adapt(const nn::ParamSet<float>& theta_init, const nn::Tensor<float>& sx,
                        const nn::Tensor<float>& st, double alpha, int n_steps,
                        const model::BackboneConfig& cfg);

struct MetaState {
    MetaConfig cfg;
    model::BackboneConfig bb_cfg;
    model::ExtractorConfig ext_cfg;
    model::AttenuationConfig attn_cfg;
    nn::ParamSet<float> theta, omega, phi;
    nn::AdamWState<float> opt_theta, opt_omega, opt_phi;
    int epoch = 0;
};

// omega/phi are initialized (randomly) even for plain meta variants so that
// mode switches never change the backbone RNG stream; theta0 supplies the
// pre-trained EI weights for meta_pp / env_adaptive.
MetaState init_meta(const MetaConfig& cfg, const model::BackboneConfig& bb,
                    std::optional<nn::ParamSet<float>> theta0);

struct EpisodeStats {
    std::string env_id;
    double inner_start_loss = 0.0;
    double query_loss = 0.0;
    std::vector<float> lambda;
};

// One outer step: per episode run (attenuation ->) inner adaptation -> query
// loss; first-order meta-gradient for theta (query gradient at the adapted
// parameters), exact gradients for omega/phi through the attenuation product
// into the first inner step's starting point; epoch-averaged AdamW update.
std::vector<EpisodeStats> meta_outer_step(MetaState& state,
                                          const std::vector<EpisodeBatch>& episodes,
                                          nn::Grads<float>* captured_theta_grad = nullptr);

struct AdaptationResult {
    nn::ParamSet<float> adapted;
    double zero_shot_query_loss = 0.0;
    std::vector<double> query_losses;  // after each inner step (eval mode), size N
    evalkit::MetricScores scores;
    evalkit::MetricScores zero_shot_scores;
    std::vector<float> lambda;
    std::vector<float> representation;
};

// Support = first K clips of the environment in filename order; query = rest.
AdaptationResult meta_test_adapt(const MetaState& state, const DataStore& store,
                                 const std::string& env_id, bool with_metrics = true);

// Adaptation on an in-memory episode (loss-based harnesses).
AdaptationResult adapt_on_episode(const MetaState& state, const EpisodeBatch& ep);

// Decode a model's predictions over the given clips into 100 ms frame events,
// next to the reference events from the label CSVs. Frames of consecutive
// clips are offset by a fixed stride so segments never mix across clips.
struct EvalEvents {
    evalkit::FrameEvents pred, ref;
    double mean_loss = 0.0;  // eval-mode MSE
};
EvalEvents evaluate_on_clips(const nn::ParamSet<float>& theta, const DataStore& store,
                             const std::vector<int>& clips, const model::BackboneConfig& cfg,
                             double threshold);

// environment representation of a set of clips at theta (train-mode batch
// statistics, no buffer updates)
std::vector<float> environment_representation(const MetaState& state, const nn::Tensor<float>& x);

}  // namespace seldlab::meta
