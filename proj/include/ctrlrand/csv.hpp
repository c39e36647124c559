#pragma once

#include <cstdio>
#include <ostream>
#include <string>
#include <vector>

#include "ctrlrand/learn.hpp"

namespace ctrlrand {

inline std::string csv_number(double x) {
    char buf[48];
    std::snprintf(buf, sizeof buf, "%.12g", x);
    return buf;
}

inline void write_csv_row(std::ostream& os, const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
        if (i) os << ',';
        os << cells[i];
    }
    os << '\n';
}

inline void write_metrics_header(std::ostream& os) {
    os << "iteration,function_value,gain_expectation,gain_se,ml_loss,grad_norm_theta,grad_norm_kappa,wallclock_s\n";
}

// Wall-clock time is written as 0 unless `with_wallclock`, so reruns are
// byte-identical.
inline void write_metrics_row(std::ostream& os, const IterationMetrics& m, bool with_wallclock) {
    write_csv_row(os, {std::to_string(m.iteration), csv_number(m.function_value), csv_number(m.gain_expectation),
                       csv_number(m.gain_se), csv_number(m.ml_loss), csv_number(m.grad_norm_theta), csv_number(m.grad_norm_kappa),
                       csv_number(with_wallclock ? m.wallclock_s : 0.0)});
}

}  // namespace ctrlrand
