#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "banditcert/params.hpp"

namespace banditcert {

struct LoggedRecord {
    Vector features;
    int action = 0;
    double cost = 0.0;
    double logging_propensity = 1.0;
    std::optional<std::int64_t> group_id;
};

// Half-open range of records logged on one context.
struct ContextGroup {
    std::size_t begin = 0;
    std::size_t end = 0;

    std::size_t size() const { return end - begin; }
};

// Logged bandit feedback. Validated on construction and immutable afterwards.
// Records without group ids are independent contexts (one group each);
// grouped records must be contiguous and share features.
class LoggedDataset {
public:
    LoggedDataset(int num_actions, int feature_dim, std::vector<LoggedRecord> records,
                  std::optional<SoftmaxParams> logger = std::nullopt);

    int num_actions() const { return num_actions_; }
    int feature_dim() const { return feature_dim_; }
    std::size_t size() const { return records_.size(); }
    std::span<const LoggedRecord> records() const { return records_; }
    const LoggedRecord& operator[](std::size_t i) const { return records_[i]; }
    const std::optional<SoftmaxParams>& logger_params() const { return logger_; }

    std::span<const ContextGroup> context_groups() const { return groups_; }
    std::size_t num_contexts() const { return groups_.size(); }
    bool grouped() const { return grouped_; }

private:
    int num_actions_;
    int feature_dim_;
    std::vector<LoggedRecord> records_;
    std::optional<SoftmaxParams> logger_;
    std::vector<ContextGroup> groups_;
    bool grouped_ = false;
};

bool operator==(const LoggedDataset& a, const LoggedDataset& b);

struct LabeledExample {
    Vector features;
    std::vector<int> labels;
};

class LabeledDataset {
public:
    LabeledDataset(int num_actions, int feature_dim, std::vector<LabeledExample> examples);

    int num_actions() const { return num_actions_; }
    int feature_dim() const { return feature_dim_; }
    std::size_t size() const { return examples_.size(); }
    std::span<const LabeledExample> examples() const { return examples_; }
    const LabeledExample& operator[](std::size_t i) const { return examples_[i]; }

private:
    int num_actions_;
    int feature_dim_;
    std::vector<LabeledExample> examples_;
};

bool operator==(const LabeledDataset& a, const LabeledDataset& b);

bool has_label(const LabeledExample& example, int action);

// Logs `m` interactions per example with softmax(alpha * logger); cost is -1
// when the played action is one of the example's labels, else 0.
LoggedDataset convert_supervised(const LabeledDataset& data, const SoftmaxParams& logger, double alpha,
                                 int m, std::uint64_t seed);

struct SyntheticOptions {
    bool multilabel = false;
    double extra_label_probability = 0.1;
};

// Gaussian features labelled by the argmax of a hidden random linear scorer.
// `label_rule_seed` fixes the scorer, `seed` the features.
LabeledDataset make_synthetic(std::size_t num_examples, int num_actions, int feature_dim,
                              std::uint64_t label_rule_seed, std::uint64_t seed,
                              const SyntheticOptions& options = {});

// Returns (holdout, rest) with |holdout| = floor(fraction * N). Order within
// each part follows the input.
std::pair<LabeledDataset, LabeledDataset> split_holdout(const LabeledDataset& data, double fraction,
                                                        std::uint64_t seed);

LoggedDataset read_dataset(const std::filesystem::path& path);
void write_dataset(const LoggedDataset& data, const std::filesystem::path& path);

LabeledDataset read_labeled(const std::filesystem::path& path);
void write_labeled(const LabeledDataset& data, const std::filesystem::path& path);

}  // namespace banditcert
