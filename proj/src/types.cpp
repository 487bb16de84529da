#include "mea/types.hpp"

#include <algorithm>

namespace mea {

ClassLabel class_from_index(int idx) {
    if (idx < 0 || idx >= kNumClasses) {
        throw DataError("class index out of range: " + std::to_string(idx));
    }
    return static_cast<ClassLabel>(idx);
}

std::string_view class_name(ClassLabel c) {
    switch (c) {
        case ClassLabel::Control: return "Control";
        case ClassLabel::DENV2: return "DENV2";
        case ClassLabel::ZIKV: return "ZIKV";
    }
    return "?";
}

ClassLabel parse_class(std::string_view token) {
    for (auto c : kAllClasses) {
        if (class_name(c) == token) return c;
    }
    throw DataError("unknown class label '" + std::string(token) + "'");
}

DpiTag::DpiTag(int day) : day_(day) {
    if (std::find(kValidDays.begin(), kValidDays.end(), day) == kValidDays.end()) {
        throw DataError("invalid dpi " + std::to_string(day) + " (expected 0, 1, 2, 3 or 7)");
    }
}

}  // namespace mea
