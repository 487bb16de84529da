#include "mea/dataset.hpp"

#include "mea/rng.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

namespace mea {

namespace {

void append_double(std::string& out, double v) {
    char buf[32];
    auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    out.append(buf, end);
}

std::string describe_line(const std::filesystem::path& path, std::size_t line) {
    return path.string() + ":" + std::to_string(line);
}

}  // namespace

std::vector<std::string> raw_feature_names() {
    std::vector<std::string> names;
    names.reserve(kRawFeatureCount);
    for (int c = 1; c <= kNumChannels; ++c) {
        char buf[8];
        std::snprintf(buf, sizeof(buf), "ch%02d", c);
        names.emplace_back(buf);
    }
    names.emplace_back("time");
    return names;
}

FeatureTable make_table(std::vector<std::string> names, RowMatrix features,
                        std::vector<ClassLabel> labels, DpiTag dpi) {
    FeatureTable t{std::move(names), std::move(features), std::move(labels), dpi};
    t.validate();
    return t;
}

void FeatureTable::validate() const {
    if (static_cast<std::size_t>(features.rows()) != labels.size()) {
        throw DataError("feature rows (" + std::to_string(features.rows()) +
                        ") != labels (" + std::to_string(labels.size()) + ")");
    }
    if (feature_names.size() != static_cast<std::size_t>(features.cols())) {
        throw DataError("feature names (" + std::to_string(feature_names.size()) +
                        ") != feature columns (" + std::to_string(features.cols()) + ")");
    }
    if (!features.allFinite()) throw DataError("table contains non-finite values");
}

void FeatureTable::validate_raw() const {
    validate();
    if (features.cols() != kRawFeatureCount) {
        throw DataError("expected " + std::to_string(kRawFeatureCount) + " features, got " +
                        std::to_string(features.cols()));
    }
}

FeatureTable FeatureTable::select_rows(std::span<const std::size_t> rows) const {
    FeatureTable out;
    out.feature_names = feature_names;
    out.dpi = dpi;
    out.features.resize(static_cast<Eigen::Index>(rows.size()), features.cols());
    out.labels.reserve(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        out.features.row(static_cast<Eigen::Index>(i)) =
            features.row(static_cast<Eigen::Index>(rows[i]));
        out.labels.push_back(labels[rows[i]]);
    }
    return out;
}

std::vector<int> FeatureTable::label_indices() const {
    std::vector<int> out(labels.size());
    std::transform(labels.begin(), labels.end(), out.begin(), class_index);
    return out;
}

FeatureTable load_feature_table(const std::filesystem::path& path, DpiTag dpi) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path.string());

    std::string line;
    if (!std::getline(in, line)) throw DataError(describe_line(path, 1) + ": missing header");
    if (!line.empty() && line.back() == '\r') line.pop_back();

    std::vector<std::string> header;
    {
        std::stringstream ss(line);
        std::string tok;
        while (std::getline(ss, tok, ',')) header.push_back(tok);
    }
    if (header.empty() || header.back() != "label") {
        throw DataError(describe_line(path, 1) + ": last header column must be 'label'");
    }
    header.pop_back();
    if (header.size() != kRawFeatureCount) {
        throw DataError(describe_line(path, 1) + ": expected " +
                        std::to_string(kRawFeatureCount) + " feature columns, got " +
                        std::to_string(header.size()));
    }
    if (header != raw_feature_names()) {
        throw DataError(describe_line(path, 1) + ": header does not match ch01..ch60,time,label");
    }

    std::vector<double> values;
    std::vector<ClassLabel> labels;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const char* p = line.data();
        const char* end = p + line.size();
        for (int c = 0; c < kRawFeatureCount; ++c) {
            double v = 0.0;
            auto [next, ec] = std::from_chars(p, end, v);
            if (ec != std::errc() || next == end || *next != ',') {
                throw DataError(describe_line(path, line_no) + ": malformed value in column " +
                                std::to_string(c + 1));
            }
            if (!std::isfinite(v)) {
                throw DataError(describe_line(path, line_no) + ": non-finite value");
            }
            values.push_back(v);
            p = next + 1;
        }
        std::string_view token(p, static_cast<std::size_t>(end - p));
        if (token.find(',') != std::string_view::npos) {
            throw DataError(describe_line(path, line_no) + ": too many columns");
        }
        try {
            labels.push_back(parse_class(token));
        } catch (const DataError& e) {
            throw DataError(describe_line(path, line_no) + ": " + e.what());
        }
    }

    FeatureTable t;
    t.feature_names = raw_feature_names();
    t.dpi = dpi;
    t.features = Eigen::Map<RowMatrix>(values.data(), static_cast<Eigen::Index>(labels.size()),
                                       kRawFeatureCount);
    t.labels = std::move(labels);
    return t;
}

void save_feature_table(const FeatureTable& table, const std::filesystem::path& path) {
    table.validate();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path.string());

    std::string buf;
    for (const auto& name : table.feature_names) {
        buf += name;
        buf += ',';
    }
    buf += "label\n";
    for (Eigen::Index r = 0; r < table.features.rows(); ++r) {
        for (Eigen::Index c = 0; c < table.features.cols(); ++c) {
            append_double(buf, table.features(r, c));
            buf += ',';
        }
        buf += class_name(table.labels[static_cast<std::size_t>(r)]);
        buf += '\n';
        if (buf.size() > (1u << 20)) {
            out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
            buf.clear();
        }
    }
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) throw DataError("write failed: " + path.string());
}

std::string dataset_file_name(DpiTag dpi) {
    return "control-denv2-zikv_dpi" + std::to_string(dpi.day()) + ".csv";
}

std::vector<std::size_t> FoldPlan::fold_rows(int fold) const {
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < assignments.size(); ++i) {
        if (assignments[i] == fold) rows.push_back(i);
    }
    return rows;
}

FoldPlan stratified_kfold(const FeatureTable& table, int k, std::uint64_t seed) {
    return stratified_kfold(table.labels, k, seed);
}

FoldPlan stratified_kfold(std::span<const ClassLabel> labels, int k, std::uint64_t seed) {
    if (k < 2) throw std::invalid_argument("k must be >= 2");

    std::array<std::vector<std::size_t>, kNumClasses> by_class;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        by_class[static_cast<std::size_t>(class_index(labels[i]))].push_back(i);
    }

    FoldPlan plan;
    plan.k = k;
    plan.seed = seed;
    plan.assignments.assign(labels.size(), -1);

    // Each class deals its shuffled rows round-robin, starting where the previous
    // class stopped, so both per-class and total fold sizes differ by at most one.
    std::size_t offset = 0;
    for (int c = 0; c < kNumClasses; ++c) {
        auto& rows = by_class[static_cast<std::size_t>(c)];
        if (rows.size() < static_cast<std::size_t>(k)) {
            throw DataError("class " + std::string(class_name(class_from_index(c))) + " has " +
                            std::to_string(rows.size()) + " rows, fewer than k=" +
                            std::to_string(k));
        }
        Rng rng(derive_seed(seed, {0xf01d, static_cast<std::uint64_t>(c)}));
        std::shuffle(rows.begin(), rows.end(), rng);
        for (std::size_t j = 0; j < rows.size(); ++j) {
            plan.assignments[rows[j]] = static_cast<int>((offset + j) % static_cast<std::size_t>(k));
        }
        offset = (offset + rows.size()) % static_cast<std::size_t>(k);
    }
    return plan;
}

FoldSplit fold_split(const FoldPlan& plan, int fold) {
    if (fold < 0 || fold >= plan.k) {
        throw std::out_of_range("fold " + std::to_string(fold) + " out of range [0, " +
                                std::to_string(plan.k) + ")");
    }
    const int val_fold = (fold + 1) % plan.k;
    FoldSplit s;
    for (std::size_t i = 0; i < plan.assignments.size(); ++i) {
        const int a = plan.assignments[i];
        if (a == fold) {
            s.test_rows.push_back(i);
        } else if (a == val_fold) {
            s.val_rows.push_back(i);
        } else {
            s.train_rows.push_back(i);
        }
    }
    return s;
}

MaterializedFold materialize_fold(const FeatureTable& table, const FoldPlan& plan, int fold) {
    if (plan.assignments.size() != table.n_rows()) {
        throw std::invalid_argument("fold plan does not match table size");
    }
    FoldSplit rows = fold_split(plan, fold);
    MaterializedFold m{table.select_rows(rows.train_rows), table.select_rows(rows.val_rows),
                       table.select_rows(rows.test_rows), {}};
    m.rows = std::move(rows);
    return m;
}

}  // namespace mea
