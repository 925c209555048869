#include "banditcert/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>
#include <string>

#include "banditcert/policies.hpp"
#include "banditcert/random.hpp"
#include "json_util.hpp"

namespace banditcert {

using detail::json;

namespace {

constexpr double kLoggerTolerance = 1e-9;

std::string at_record(std::size_t i) { return "record " + std::to_string(i) + ": "; }

void check_record(const LoggedRecord& r, std::size_t i, int num_actions, int feature_dim) {
    if (r.features.size() != feature_dim)
        throw std::invalid_argument(at_record(i) + "feature dimension mismatch");
    if (!r.features.allFinite()) throw std::invalid_argument(at_record(i) + "non-finite feature");
    if (r.action < 0 || r.action >= num_actions) throw std::invalid_argument(at_record(i) + "action out of range");
    if (!(r.cost >= -1.0 && r.cost <= 0.0)) throw std::invalid_argument(at_record(i) + "cost out of range");
    if (!(r.logging_propensity > 0.0 && r.logging_propensity <= 1.0))
        throw std::invalid_argument(at_record(i) + "propensity out of range");
}

}  // namespace

LoggedDataset::LoggedDataset(int num_actions, int feature_dim, std::vector<LoggedRecord> records,
                             std::optional<SoftmaxParams> logger)
    : num_actions_(num_actions), feature_dim_(feature_dim), records_(std::move(records)), logger_(std::move(logger)) {
    if (num_actions_ < 2) throw std::invalid_argument("logged dataset needs K >= 2");
    if (feature_dim_ < 1) throw std::invalid_argument("logged dataset needs p >= 1");
    if (records_.empty()) throw std::invalid_argument("logged dataset is empty");
    if (logger_) {
        validate(*logger_);
        if (logger_->num_actions() != num_actions_ || logger_->feature_dim() != feature_dim_)
            throw std::invalid_argument("logger parameters do not match (K, p)");
    }

    grouped_ = records_.front().group_id.has_value();
    for (std::size_t i = 0; i < records_.size(); ++i) {
        const LoggedRecord& r = records_[i];
        check_record(r, i, num_actions_, feature_dim_);
        if (r.group_id.has_value() != grouped_)
            throw std::invalid_argument(at_record(i) + "either every record has a group or none does");
        if (logger_) {
            const double p = softmax_propensity(*logger_, r.features, r.action);
            if (std::abs(p - r.logging_propensity) > kLoggerTolerance)
                throw std::invalid_argument(at_record(i) + "propensity disagrees with logger parameters");
        }
    }

    if (!grouped_) {
        groups_.reserve(records_.size());
        for (std::size_t i = 0; i < records_.size(); ++i) groups_.push_back({i, i + 1});
        return;
    }

    std::vector<std::int64_t> seen;
    std::size_t begin = 0;
    for (std::size_t i = 1; i <= records_.size(); ++i) {
        if (i < records_.size() && *records_[i].group_id == *records_[begin].group_id) {
            if (records_[i].features != records_[begin].features)
                throw std::invalid_argument(at_record(i) + "group members must share features");
            continue;
        }
        seen.push_back(*records_[begin].group_id);
        groups_.push_back({begin, i});
        begin = i;
    }
    std::sort(seen.begin(), seen.end());
    if (std::adjacent_find(seen.begin(), seen.end()) != seen.end())
        throw std::invalid_argument("groups must be contiguous");
}

bool operator==(const LoggedDataset& a, const LoggedDataset& b) {
    if (a.num_actions() != b.num_actions() || a.feature_dim() != b.feature_dim() || a.size() != b.size())
        return false;
    if (a.logger_params().has_value() != b.logger_params().has_value()) return false;
    if (a.logger_params() && a.logger_params()->weights != b.logger_params()->weights) return false;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const LoggedRecord& x = a[i];
        const LoggedRecord& y = b[i];
        if (x.features != y.features || x.action != y.action || x.cost != y.cost ||
            x.logging_propensity != y.logging_propensity || x.group_id != y.group_id)
            return false;
    }
    return true;
}

LabeledDataset::LabeledDataset(int num_actions, int feature_dim, std::vector<LabeledExample> examples)
    : num_actions_(num_actions), feature_dim_(feature_dim), examples_(std::move(examples)) {
    if (num_actions_ < 2) throw std::invalid_argument("labeled dataset needs K >= 2");
    if (feature_dim_ < 1) throw std::invalid_argument("labeled dataset needs p >= 1");
    for (std::size_t i = 0; i < examples_.size(); ++i) {
        LabeledExample& e = examples_[i];
        const std::string where = "example " + std::to_string(i) + ": ";
        if (e.features.size() != feature_dim_) throw std::invalid_argument(where + "feature dimension mismatch");
        if (e.labels.empty()) throw std::invalid_argument(where + "no labels");
        for (int label : e.labels)
            if (label < 0 || label >= num_actions_) throw std::invalid_argument(where + "label out of range");
    }
}

bool operator==(const LabeledDataset& a, const LabeledDataset& b) {
    if (a.num_actions() != b.num_actions() || a.feature_dim() != b.feature_dim() || a.size() != b.size())
        return false;
    for (std::size_t i = 0; i < a.size(); ++i)
        if (a[i].features != b[i].features || a[i].labels != b[i].labels) return false;
    return true;
}

bool has_label(const LabeledExample& example, int action) {
    return std::find(example.labels.begin(), example.labels.end(), action) != example.labels.end();
}

namespace {

int sample_categorical(std::span<const double> probs, Rng& rng) {
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    const double u = unif(rng);
    double acc = 0.0;
    for (std::size_t a = 0; a < probs.size(); ++a) {
        acc += probs[a];
        if (u < acc) return static_cast<int>(a);
    }
    // Rounding left u above the accumulated mass: take the last action with mass.
    for (std::size_t a = probs.size(); a-- > 0;)
        if (probs[a] > 0.0) return static_cast<int>(a);
    return 0;
}

}  // namespace

LoggedDataset convert_supervised(const LabeledDataset& data, const SoftmaxParams& logger, double alpha, int m,
                                 std::uint64_t seed) {
    validate(logger);
    if (logger.num_actions() != data.num_actions() || logger.feature_dim() != data.feature_dim())
        throw std::invalid_argument("logger dimensions do not match the labeled data");
    if (data.size() == 0) throw std::invalid_argument("cannot log an empty dataset");
    if (!(alpha >= 0.0) || !std::isfinite(alpha)) throw std::invalid_argument("alpha must be finite and >= 0");
    if (m < 1) throw std::invalid_argument("m must be >= 1");

    SoftmaxParams scaled{alpha * logger.weights};
    Rng rng = make_rng(seed, {stream::logging});
    std::vector<LoggedRecord> records;
    records.reserve(data.size() * static_cast<std::size_t>(m));
    for (std::size_t i = 0; i < data.size(); ++i) {
        const LabeledExample& ex = data[i];
        const Vector probs = softmax_probabilities(scaled, ex.features);
        for (int j = 0; j < m; ++j) {
            LoggedRecord r;
            r.features = ex.features;
            r.action = sample_categorical({probs.data(), static_cast<std::size_t>(probs.size())}, rng);
            r.cost = has_label(ex, r.action) ? -1.0 : 0.0;
            r.logging_propensity = probs[r.action];
            if (m > 1) r.group_id = static_cast<std::int64_t>(i);
            records.push_back(std::move(r));
        }
    }
    return LoggedDataset(data.num_actions(), data.feature_dim(), std::move(records), std::move(scaled));
}

LabeledDataset make_synthetic(std::size_t num_examples, int num_actions, int feature_dim,
                              std::uint64_t label_rule_seed, std::uint64_t seed, const SyntheticOptions& options) {
    if (num_actions < 2) throw std::invalid_argument("make_synthetic: K must be >= 2");
    if (feature_dim < 1) throw std::invalid_argument("make_synthetic: p must be >= 1");
    if (!(options.extra_label_probability >= 0.0 && options.extra_label_probability <= 1.0))
        throw std::invalid_argument("make_synthetic: extra label probability must be in [0, 1]");

    std::normal_distribution<double> normal(0.0, 1.0);
    Rng scorer_rng = make_rng(label_rule_seed, {stream::synth_scorer});
    Matrix scorer(num_actions, feature_dim);
    for (int a = 0; a < num_actions; ++a)
        for (int j = 0; j < feature_dim; ++j) scorer(a, j) = normal(scorer_rng);

    Rng rng = make_rng(seed, {stream::synth_features});
    std::bernoulli_distribution extra(options.extra_label_probability);
    std::vector<LabeledExample> examples(num_examples);
    for (LabeledExample& ex : examples) {
        ex.features.resize(feature_dim);
        for (int j = 0; j < feature_dim; ++j) ex.features[j] = normal(rng);
        const Vector scores = scorer * ex.features;
        Eigen::Index best = 0;
        scores.maxCoeff(&best);
        ex.labels.push_back(static_cast<int>(best));
        if (options.multilabel) {
            for (int a = 0; a < num_actions; ++a)
                if (a != best && extra(rng)) ex.labels.push_back(a);
        }
    }
    return LabeledDataset(num_actions, feature_dim, std::move(examples));
}

std::pair<LabeledDataset, LabeledDataset> split_holdout(const LabeledDataset& data, double fraction,
                                                        std::uint64_t seed) {
    if (!(fraction > 0.0 && fraction < 1.0)) throw std::invalid_argument("split fraction must be in (0, 1)");
    const std::size_t n = data.size();
    const auto k = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(n)));
    if (k == 0 || k == n) throw std::invalid_argument("degenerate split: one side would be empty");

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng = make_rng(seed, {stream::split});
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<char> in_holdout(n, 0);
    for (std::size_t i = 0; i < k; ++i) in_holdout[order[i]] = 1;

    std::vector<LabeledExample> holdout;
    std::vector<LabeledExample> rest;
    holdout.reserve(k);
    rest.reserve(n - k);
    for (std::size_t i = 0; i < n; ++i) (in_holdout[i] ? holdout : rest).push_back(data[i]);
    return {LabeledDataset(data.num_actions(), data.feature_dim(), std::move(holdout)),
            LabeledDataset(data.num_actions(), data.feature_dim(), std::move(rest))};
}

// ---------------------------------------------------------------------------
// JSON-lines files.

namespace {

std::string line_prefix(std::size_t line) { return "line " + std::to_string(line) + ": "; }

json parse_line(const std::string& text, std::size_t line) {
    try {
        return json::parse(text);
    } catch (const json::parse_error& e) {
        throw std::runtime_error(line_prefix(line) + "malformed JSON (" + e.what() + ")");
    }
}

int header_int(const json& header, const char* key, std::size_t line) {
    if (!header.contains(key) || !header[key].is_number_integer())
        throw std::runtime_error(line_prefix(line) + "header needs integer \"" + key + "\"");
    return header[key].get<int>();
}

std::ifstream open_in(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    return in;
}

std::ofstream open_out(const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    return out;
}

}  // namespace

LoggedDataset read_dataset(const std::filesystem::path& path) {
    std::ifstream in = open_in(path);
    std::string text;
    std::size_t line = 0;
    int k = 0;
    int p = 0;
    std::optional<SoftmaxParams> logger;
    std::vector<LoggedRecord> records;
    bool have_header = false;

    while (std::getline(in, text)) {
        ++line;
        if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
        const json j = parse_line(text, line);
        try {
            if (!have_header) {
                k = header_int(j, "K", line);
                p = header_int(j, "p", line);
                if (k < 2 || p < 1) throw std::runtime_error("invalid (K, p) in header");
                if (j.contains("logger") && !j["logger"].is_null())
                    logger = SoftmaxParams{detail::matrix_from_json(j["logger"], k, p, "logger")};
                have_header = true;
                continue;
            }
            LoggedRecord r;
            r.features = detail::vector_from_json(j.at("features"), p, "features");
            r.action = j.at("action").get<int>();
            r.cost = j.at("cost").get<double>();
            r.logging_propensity = j.at("propensity").get<double>();
            if (j.contains("group") && !j["group"].is_null()) r.group_id = j["group"].get<std::int64_t>();
            check_record(r, records.size(), k, p);
            records.push_back(std::move(r));
        } catch (const std::runtime_error& e) {
            throw std::runtime_error(line_prefix(line) + e.what());
        } catch (const std::invalid_argument& e) {
            throw std::runtime_error(line_prefix(line) + e.what());
        } catch (const json::exception& e) {
            throw std::runtime_error(line_prefix(line) + e.what());
        }
    }
    if (!have_header) throw std::runtime_error(path.string() + ": missing header line");
    try {
        return LoggedDataset(k, p, std::move(records), std::move(logger));
    } catch (const std::invalid_argument& e) {
        throw std::runtime_error(path.string() + ": " + e.what());
    }
}

void write_dataset(const LoggedDataset& data, const std::filesystem::path& path) {
    std::ofstream out = open_out(path);
    json header{{"K", data.num_actions()}, {"p", data.feature_dim()}, {"logger", nullptr}};
    if (data.logger_params()) header["logger"] = detail::matrix_to_json(data.logger_params()->weights);
    out << header.dump() << '\n';
    for (const LoggedRecord& r : data.records()) {
        json j{{"features", detail::vector_to_json(r.features)},
               {"action", r.action},
               {"cost", r.cost},
               {"propensity", r.logging_propensity},
               {"group", nullptr}};
        if (r.group_id) j["group"] = *r.group_id;
        out << j.dump() << '\n';
    }
}

LabeledDataset read_labeled(const std::filesystem::path& path) {
    std::ifstream in = open_in(path);
    std::string text;
    std::size_t line = 0;
    int k = 0;
    int p = 0;
    bool have_header = false;
    std::vector<LabeledExample> examples;
    while (std::getline(in, text)) {
        ++line;
        if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
        const json j = parse_line(text, line);
        try {
            if (!have_header) {
                k = header_int(j, "K", line);
                p = header_int(j, "p", line);
                if (k < 2 || p < 1) throw std::runtime_error("invalid (K, p) in header");
                have_header = true;
                continue;
            }
            LabeledExample ex;
            ex.features = detail::vector_from_json(j.at("features"), p, "features");
            ex.labels = j.at("labels").get<std::vector<int>>();
            if (ex.labels.empty()) throw std::runtime_error("no labels");
            for (int label : ex.labels)
                if (label < 0 || label >= k) throw std::runtime_error("label out of range");
            examples.push_back(std::move(ex));
        } catch (const std::runtime_error& e) {
            throw std::runtime_error(line_prefix(line) + e.what());
        } catch (const json::exception& e) {
            throw std::runtime_error(line_prefix(line) + e.what());
        }
    }
    if (!have_header) throw std::runtime_error(path.string() + ": missing header line");
    return LabeledDataset(k, p, std::move(examples));
}

void write_labeled(const LabeledDataset& data, const std::filesystem::path& path) {
    std::ofstream out = open_out(path);
    out << json{{"K", data.num_actions()}, {"p", data.feature_dim()}}.dump() << '\n';
    for (const LabeledExample& ex : data.examples())
        out << json{{"features", detail::vector_to_json(ex.features)}, {"labels", ex.labels}}.dump() << '\n';
}

}  // namespace banditcert
