#pragma once

#include "cliperase/errors.hpp"
#include "cliperase/losses.hpp"

#include <cstdio>
#include <cstdlib>
#include <sstream>
#include <string>
#include <vector>

namespace cliperase {

struct StepRecord {
    int epoch = 0;
    long step = 0;
    LossBreakdown loss;
    friend bool operator==(const StepRecord&, const StepRecord&) = default;
};

/// Validation measurements after one epoch. For pretraining `retain_acc` is
/// the held-out zero-shot accuracy over all classes and `forget_acc` is 0.
struct EpochRecord {
    int epoch = 0;
    double objective = 0.0;
    double val_loss = 0.0;
    double retain_acc = 0.0;
    double forget_acc = 0.0;
    friend bool operator==(const EpochRecord&, const EpochRecord&) = default;
};

struct RunHistory {
    std::string kind;  // "pretrain" or the unlearning method name
    std::vector<StepRecord> steps;
    std::vector<EpochRecord> epochs;
    int selected_checkpoint_epoch = -1;

    friend bool operator==(const RunHistory&, const RunHistory&) = default;
};

namespace detail {

inline std::string hexfloat(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%a", v);
    return buf;
}

inline double parse_hexfloat(const std::string& s, std::size_t line) {
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    if (s.empty() || end != s.c_str() + s.size()) throw ParseError(line, "bad float '" + s + "'");
    return v;
}

}  // namespace detail

/// One record per line; floats are C hex literals so values round-trip bit-exactly.
inline std::vector<std::string> history_to_lines(const RunHistory& h) {
    using detail::hexfloat;
    std::vector<std::string> lines;
    lines.push_back("run " + (h.kind.empty() ? std::string("-") : h.kind));
    for (const auto& s : h.steps) {
        const auto& l = s.loss;
        lines.push_back("step " + std::to_string(s.epoch) + " " + std::to_string(s.step) + " " + hexfloat(l.l_fm) + " " +
                        hexfloat(l.l_rm) + " " + hexfloat(l.l_cm) + " " + hexfloat(l.total) + " " +
                        hexfloat(l.lambda1) + " " + hexfloat(l.lambda2) + " " + hexfloat(l.lambda3));
    }
    for (const auto& e : h.epochs)
        lines.push_back("epoch " + std::to_string(e.epoch) + " " + hexfloat(e.objective) + " " + hexfloat(e.val_loss) +
                        " " + hexfloat(e.retain_acc) + " " + hexfloat(e.forget_acc));
    lines.push_back("selected " + std::to_string(h.selected_checkpoint_epoch));
    return lines;
}

inline RunHistory history_from_lines(const std::vector<std::string>& lines, std::size_t first_line = 1) {
    RunHistory h;
    for (std::size_t i = 0; i < lines.size(); ++i) {
        const std::size_t ln = first_line + i;
        std::istringstream ss(lines[i]);
        std::string tag;
        ss >> tag;
        std::vector<std::string> f;
        for (std::string w; ss >> w;) f.push_back(w);
        auto num = [&](std::size_t k) { return detail::parse_hexfloat(f.at(k), ln); };
        auto integer = [&](std::size_t k) {
            try {
                std::size_t pos = 0;
                const long v = std::stol(f.at(k), &pos);
                if (pos != f.at(k).size()) throw ParseError(ln, "bad integer");
                return v;
            } catch (const std::logic_error&) {
                throw ParseError(ln, "bad integer field");
            }
        };
        if (tag == "run" && f.size() == 1) {
            h.kind = f[0] == "-" ? "" : f[0];
        } else if (tag == "step" && f.size() == 9) {
            StepRecord s;
            s.epoch = static_cast<int>(integer(0));
            s.step = integer(1);
            s.loss = {num(2), num(3), num(4), num(5), num(6), num(7), num(8)};
            h.steps.push_back(s);
        } else if (tag == "epoch" && f.size() == 5) {
            h.epochs.push_back({static_cast<int>(integer(0)), num(1), num(2), num(3), num(4)});
        } else if (tag == "selected" && f.size() == 1) {
            h.selected_checkpoint_epoch = static_cast<int>(integer(0));
        } else {
            throw ParseError(ln, "unrecognized history record '" + lines[i] + "'");
        }
    }
    return h;
}

}  // namespace cliperase
