#pragma once

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "bmoe/tensor.hpp"

namespace bmoe {

/// counts[t][p]: samples of true class t predicted as p.
using ConfusionMatrix = std::vector<std::vector<std::size_t>>;

inline ConfusionMatrix confusion_matrix(const std::vector<std::size_t>& y_true, const std::vector<std::size_t>& y_pred,
                                        std::size_t num_classes) {
    if (y_true.size() != y_pred.size())
        throw ContractError("confusion_matrix: " + std::to_string(y_true.size()) + " labels but " +
                            std::to_string(y_pred.size()) + " predictions");
    ConfusionMatrix m(num_classes, std::vector<std::size_t>(num_classes, 0));
    for (std::size_t i = 0; i < y_true.size(); ++i) {
        if (y_true[i] >= num_classes || y_pred[i] >= num_classes)
            throw ContractError("confusion_matrix: entry " + std::to_string(i) + " is outside [0, " +
                                std::to_string(num_classes) + ")");
        ++m[y_true[i]][y_pred[i]];
    }
    return m;
}

namespace detail {
inline void require_square(const ConfusionMatrix& m, const char* op) {
    for (const auto& row : m)
        if (row.size() != m.size())
            throw DimensionError(std::string(op) + ": confusion matrix is not square");
}
}  // namespace detail

/// F1 = 2PR/(P+R) per class, 0 whenever P or R is zero or undefined.
inline std::vector<double> per_class_f1(const ConfusionMatrix& m) {
    detail::require_square(m, "per_class_f1");
    const std::size_t C = m.size();
    std::vector<double> f1(C, 0.0);
    for (std::size_t c = 0; c < C; ++c) {
        std::size_t tp = m[c][c], fp = 0, fn = 0;
        for (std::size_t o = 0; o < C; ++o) {
            if (o == c) continue;
            fp += m[o][c];
            fn += m[c][o];
        }
        if (tp == 0) continue;  // P or R is 0 or 0/0
        const double precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
        const double recall = static_cast<double>(tp) / static_cast<double>(tp + fn);
        f1[c] = 2.0 * precision * recall / (precision + recall);
    }
    return f1;
}

inline double f1_macro(const ConfusionMatrix& m) {
    const auto f1 = per_class_f1(m);
    if (f1.empty()) return 0.0;
    double s = 0.0;
    for (double v : f1) s += v;
    return s / static_cast<double>(f1.size());
}

inline std::size_t total_count(const ConfusionMatrix& m) {
    std::size_t n = 0;
    for (const auto& row : m)
        for (auto v : row) n += v;
    return n;
}

inline double top1_accuracy(const ConfusionMatrix& m) {
    detail::require_square(m, "top1_accuracy");
    const std::size_t n = total_count(m);
    if (n == 0) throw ContractError("top1_accuracy: no samples");
    std::size_t hit = 0;
    for (std::size_t c = 0; c < m.size(); ++c) hit += m[c][c];
    return static_cast<double>(hit) / static_cast<double>(n);
}

struct MetricsReport {
    double top1 = 0.0;
    double f1_macro = 0.0;
    std::vector<double> per_class_f1;
    std::vector<double> per_class_accuracy;  // recall; 0 for unsupported classes
    ConfusionMatrix confusion;
    std::vector<std::size_t> support;
    /// Classes with no samples; they enter the macro mean as F1 = 0.
    std::vector<std::size_t> zero_support;

    nlohmann::json to_json() const {
        return {{"top1", top1},
                {"f1_macro", f1_macro},
                {"per_class_f1", per_class_f1},
                {"per_class_accuracy", per_class_accuracy},
                {"support", support},
                {"zero_support_classes", zero_support},
                {"confusion", confusion}};
    }

    std::string confusion_csv() const {
        std::ostringstream os;
        os << "true\\pred";
        for (std::size_t c = 0; c < confusion.size(); ++c) os << ',' << c;
        os << '\n';
        for (std::size_t t = 0; t < confusion.size(); ++t) {
            os << t;
            for (auto v : confusion[t]) os << ',' << v;
            os << '\n';
        }
        return os.str();
    }
};

inline MetricsReport make_report(const ConfusionMatrix& m) {
    MetricsReport r;
    r.confusion = m;
    r.top1 = top1_accuracy(m);
    r.per_class_f1 = per_class_f1(m);
    r.f1_macro = f1_macro(m);
    for (std::size_t c = 0; c < m.size(); ++c) {
        std::size_t s = 0;
        for (auto v : m[c]) s += v;
        r.support.push_back(s);
        r.per_class_accuracy.push_back(s == 0 ? 0.0 : static_cast<double>(m[c][c]) / static_cast<double>(s));
        if (s == 0) r.zero_support.push_back(c);
    }
    return r;
}

inline MetricsReport make_report(const std::vector<std::size_t>& y_true, const std::vector<std::size_t>& y_pred,
                                 std::size_t num_classes) {
    return make_report(confusion_matrix(y_true, y_pred, num_classes));
}

// ---------------------------------------------------------------------------
// Per-class analysis table

enum class ClassTag { Ambiguous, Underrepresented, Subtle, None };

inline std::string_view tag_name(ClassTag t) {
    switch (t) {
        case ClassTag::Ambiguous: return "ambiguous";
        case ClassTag::Underrepresented: return "underrepresented";
        case ClassTag::Subtle: return "subtle";
        case ClassTag::None: return "none";
    }
    return "none";
}

struct ClassAnnotation {
    ClassTag tag = ClassTag::None;
    double train_share_percent = 0.0;
};

struct PerClassRow {
    std::size_t class_id;
    std::string name;
    ClassTag tag;
    double train_share_percent;
    double accuracy;
    double f1;
};

/// One row per class, ordered by tag (ambiguous, underrepresented, subtle,
/// none) and then class id. Unannotated classes are tagged none.
inline std::vector<PerClassRow> per_class_table(const MetricsReport& report,
                                                const std::map<std::size_t, ClassAnnotation>& annotations,
                                                const std::vector<std::string>& class_names = {}) {
    const std::size_t C = report.per_class_f1.size();
    for (const auto& [c, _] : annotations)
        if (c >= C) throw ContractError("per_class_table: unknown class " + std::to_string(c));
    std::vector<PerClassRow> rows;
    for (std::size_t c = 0; c < C; ++c) {
        const auto it = annotations.find(c);
        const ClassAnnotation a = it == annotations.end() ? ClassAnnotation{} : it->second;
        rows.push_back({c, c < class_names.size() ? class_names[c] : std::to_string(c), a.tag, a.train_share_percent,
                        report.per_class_accuracy[c], report.per_class_f1[c]});
    }
    std::stable_sort(rows.begin(), rows.end(), [](const PerClassRow& a, const PerClassRow& b) {
        return std::pair(a.tag, a.class_id) < std::pair(b.tag, b.class_id);
    });
    return rows;
}

inline std::string per_class_csv(const std::vector<PerClassRow>& rows) {
    std::ostringstream os;
    os << "class_id,class_name,tag,train_share_percent,accuracy,f1\n" << std::setprecision(6);
    for (const auto& r : rows)
        os << r.class_id << ',' << r.name << ',' << tag_name(r.tag) << ',' << r.train_share_percent << ','
           << r.accuracy << ',' << r.f1 << '\n';
    return os.str();
}

}  // namespace bmoe
