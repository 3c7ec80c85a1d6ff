#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <ostream>
#include <string>

namespace samlab {

/// One training-step or evaluation row. Fields that were not measured hold
/// NaN (printed as "nan" in CSV).
struct MetricsRecord {
    long long step = 0;
    double train_loss = std::numeric_limits<double>::quiet_NaN();
    double eval_loss = std::numeric_limits<double>::quiet_NaN();
    double eval_accuracy = std::numeric_limits<double>::quiet_NaN();
    double ascent_grad_norm = std::numeric_limits<double>::quiet_NaN();
    double adv_loss_gap = std::numeric_limits<double>::quiet_NaN();
    double step_wall_ms = std::numeric_limits<double>::quiet_NaN();
    long long skipped_ascent_count = 0;
};

inline constexpr const char* kMetricsCsvHeader =
    "step,train_loss,eval_loss,eval_accuracy,ascent_grad_norm,adv_loss_gap,step_wall_ms,"
    "skipped_ascent_count";

/// Floats print with 17 significant digits so values round-trip exactly.
inline std::string format_csv_double(double v) {
    if (std::isnan(v)) return "nan";
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline void write_metrics_row(std::ostream& os, const MetricsRecord& r) {
    os << r.step << ',' << format_csv_double(r.train_loss) << ',' << format_csv_double(r.eval_loss)
       << ',' << format_csv_double(r.eval_accuracy) << ',' << format_csv_double(r.ascent_grad_norm)
       << ',' << format_csv_double(r.adv_loss_gap) << ',' << format_csv_double(r.step_wall_ms)
       << ',' << r.skipped_ascent_count << '\n';
}

}  // namespace samlab
