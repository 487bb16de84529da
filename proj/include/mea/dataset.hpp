#pragma once

#include "mea/types.hpp"

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace mea {

/// Row-major sample matrix with one class label per row and one dpi tag per table.
///
/// Raw tables carry 61 features (ch01..ch60, time). Derived tables produced by
/// preprocessing or embedding extraction keep the same layout with fewer or
/// different columns; `feature_names` always matches `features.cols()`.
struct FeatureTable {
    std::vector<std::string> feature_names;
    RowMatrix features;
    std::vector<ClassLabel> labels;
    DpiTag dpi;

    std::size_t n_rows() const { return labels.size(); }
    std::size_t n_features() const { return static_cast<std::size_t>(features.cols()); }

    /// Throws DataError when labels/features/names disagree or a value is not finite.
    void validate() const;
    /// validate() plus the raw 61-column schema check.
    void validate_raw() const;

    FeatureTable select_rows(std::span<const std::size_t> rows) const;
    std::vector<int> label_indices() const;
};

/// ch01..ch60, time
std::vector<std::string> raw_feature_names();

FeatureTable make_table(std::vector<std::string> names, RowMatrix features,
                        std::vector<ClassLabel> labels, DpiTag dpi);

/// Reads a dataset CSV (header ch01..ch60,time,label). Rows keep file order.
FeatureTable load_feature_table(const std::filesystem::path& path, DpiTag dpi);
/// Writes values with shortest round-trip formatting, so load(save(t)) == t cell-exactly.
void save_feature_table(const FeatureTable& table, const std::filesystem::path& path);

/// `control-denv2-zikv_dpi<d>.csv`
std::string dataset_file_name(DpiTag dpi);

struct FoldPlan {
    int k = 10;
    std::uint64_t seed = 0;
    std::vector<int> assignments;  // fold index per row

    std::vector<std::size_t> fold_rows(int fold) const;
};

FoldPlan stratified_kfold(const FeatureTable& table, int k, std::uint64_t seed);
FoldPlan stratified_kfold(std::span<const ClassLabel> labels, int k, std::uint64_t seed);

struct FoldSplit {
    std::vector<std::size_t> train_rows;
    std::vector<std::size_t> val_rows;
    std::vector<std::size_t> test_rows;
};

/// test = fold i, validation = fold (i+1) mod k, train = the rest.
FoldSplit fold_split(const FoldPlan& plan, int fold);

struct MaterializedFold {
    FeatureTable train;
    FeatureTable val;
    FeatureTable test;
    FoldSplit rows;
};

MaterializedFold materialize_fold(const FeatureTable& table, const FoldPlan& plan, int fold);

}  // namespace mea
