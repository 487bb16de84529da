#pragma once

#include <Eigen/Dense>

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace mea {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

inline constexpr int kNumClasses = 3;
inline constexpr int kNumChannels = 60;
inline constexpr int kRawFeatureCount = kNumChannels + 1;  // channels + time

enum class ClassLabel : std::uint8_t { Control = 0, DENV2 = 1, ZIKV = 2 };

inline constexpr std::array<ClassLabel, kNumClasses> kAllClasses = {
    ClassLabel::Control, ClassLabel::DENV2, ClassLabel::ZIKV};

constexpr int class_index(ClassLabel c) { return static_cast<int>(c); }

ClassLabel class_from_index(int idx);
std::string_view class_name(ClassLabel c);
/// Parses the canonical token (Control, DENV2, ZIKV). Throws DataError otherwise.
ClassLabel parse_class(std::string_view token);

/// Days post-infection. Only the recorded time points are representable.
class DpiTag {
public:
    static constexpr std::array<int, 5> kValidDays = {0, 1, 2, 3, 7};

    DpiTag() = default;
    explicit DpiTag(int day);

    int day() const { return day_; }
    friend bool operator==(DpiTag a, DpiTag b) { return a.day_ == b.day_; }

private:
    int day_ = 0;
};

/// Malformed input data (files, tables, labels).
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Invalid run configuration; maps to CLI exit code 2.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace mea
