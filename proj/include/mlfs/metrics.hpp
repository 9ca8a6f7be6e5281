#pragma once

#include <cstddef>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "tensor.hpp"

namespace mlfs {

// one CSV line of the training log. record is "step" or "eval"; stage is
// -1 for teacher pretraining, 0..2 for the staged run, 3 for student
// distillation. Numeric cells print as %.17g and the format carries no
// timestamps, so equal runs serialize byte-identically.
struct MetricsRow {
    std::string record;
    std::size_t step = 0;
    int stage = 0;
    std::string subnet;
    std::string split;  // eval rows only
    double task = 0.0, kd = 0.0, fd = 0.0, total = 0.0;
    double scale = 0.0, grad_norm = 0.0, lr_scale = 0.0;
    double loss = 0.0, accuracy = 0.0;  // eval rows only
};

inline MetricsRow step_row(std::size_t step, int stage, const std::string& subnet, double task, double kd,
                           double fd, double total, double scale, double grad_norm, double lr_scale) {
    MetricsRow r;
    r.record = "step";
    r.step = step;
    r.stage = stage;
    r.subnet = subnet;
    r.task = task;
    r.kd = kd;
    r.fd = fd;
    r.total = total;
    r.scale = scale;
    r.grad_norm = grad_norm;
    r.lr_scale = lr_scale;
    return r;
}

inline MetricsRow eval_row(std::size_t step, int stage, const std::string& subnet, const std::string& split,
                           double loss, double accuracy) {
    MetricsRow r;
    r.record = "eval";
    r.step = step;
    r.stage = stage;
    r.subnet = subnet;
    r.split = split;
    r.loss = loss;
    r.accuracy = accuracy;
    return r;
}

namespace detail {

inline std::string g17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace detail

inline const char* metrics_header() {
    return "record,step,stage,subnet,split,task,kd,fd,total,scale,grad_norm,lr_scale,loss,accuracy";
}

inline std::string format_metrics_csv(const std::vector<MetricsRow>& rows) {
    std::string out = metrics_header();
    out += "\n";
    for (const MetricsRow& r : rows) {
        out += r.record;
        out += "," + std::to_string(r.step);
        out += "," + std::to_string(r.stage);
        out += "," + r.subnet;
        out += "," + r.split;
        if (r.record == "eval") {
            out += ",,,,,,,";  // task..lr_scale not logged on eval rows
            out += "," + detail::g17(r.loss);
            out += "," + detail::g17(r.accuracy);
        } else {
            out += "," + detail::g17(r.task);
            out += "," + detail::g17(r.kd);
            out += "," + detail::g17(r.fd);
            out += "," + detail::g17(r.total);
            out += "," + detail::g17(r.scale);
            out += "," + detail::g17(r.grad_norm);
            out += "," + detail::g17(r.lr_scale);
            out += ",,";  // loss, accuracy not logged on step rows
        }
        out += "\n";
    }
    return out;
}

inline void write_metrics_csv(const std::string& path, const std::vector<MetricsRow>& rows) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("metrics: cannot open " + path + " for writing");
    std::string body = format_metrics_csv(rows);
    f.write(body.data(), static_cast<std::streamsize>(body.size()));
    if (!f) throw IoError("metrics: short write to " + path);
}

}  // namespace mlfs
