#pragma once

#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "toolnet/arch.hpp"
#include "toolnet/data.hpp"
#include "toolnet/tensor.hpp"

namespace toolnet {

// Binary label map, values in {0, 1}.
struct BinaryMask {
    int h = 0;
    int w = 0;
    std::vector<uint8_t> v;

    BinaryMask() = default;
    BinaryMask(int height, int width) : h(height), w(width), v(static_cast<size_t>(height) * width, 0) {}
};

// Per-class pixel tallies, k=0 background, k=1 foreground. The binary
// symmetry TP_0 = TN_1 (etc.) holds by construction.
struct ConfusionCounts {
    long tp[2] = {0, 0};
    long fp[2] = {0, 0};
    long fn[2] = {0, 0};
    long tn[2] = {0, 0};

    long pixels() const { return tp[1] + fp[1] + fn[1] + tn[1]; }

    ConfusionCounts& operator+=(const ConfusionCounts& o) {
        for (int k = 0; k < 2; ++k) {
            tp[k] += o.tp[k];
            fp[k] += o.fp[k];
            fn[k] += o.fn[k];
            tn[k] += o.tn[k];
        }
        return *this;
    }
};

inline ConfusionCounts confusion(const BinaryMask& pred, const BinaryMask& gt) {
    if (pred.h != gt.h || pred.w != gt.w)
        throw_shape_error("confusion: mask sizes differ, ", pred.h, "x", pred.w, " vs ", gt.h,
                          "x", gt.w);
    ConfusionCounts c;
    for (size_t i = 0; i < pred.v.size(); ++i) {
        uint8_t p = pred.v[i], g = gt.v[i];
        if (p > 1 || g > 1)
            throw std::invalid_argument("confusion: masks must be binary {0,1}");
        c.tp[1] += p & g;
        c.fp[1] += p & (1 - g);
        c.fn[1] += (1 - p) & g;
        c.tn[1] += (1 - p) & (1 - g);
    }
    c.tp[0] = c.tn[1];
    c.fp[0] = c.fn[1];
    c.fn[0] = c.fp[1];
    c.tn[0] = c.tp[1];
    return c;
}

// A class absent from both masks (TP+FP+FN = 0) contributes a perfect score
// rather than 0/0.
inline double class_iou(const ConfusionCounts& c, int k) {
    long denom = c.tp[k] + c.fp[k] + c.fn[k];
    return denom == 0 ? 1.0 : static_cast<double>(c.tp[k]) / denom;
}

inline double class_dsc(const ConfusionCounts& c, int k) {
    long denom = 2 * c.tp[k] + c.fp[k] + c.fn[k];
    return denom == 0 ? 1.0 : 2.0 * c.tp[k] / denom;
}

inline double mean_iou(const ConfusionCounts& c) {
    return 0.5 * (class_iou(c, 0) + class_iou(c, 1));
}

inline double mean_dsc(const ConfusionCounts& c) {
    return 0.5 * (class_dsc(c, 0) + class_dsc(c, 1));
}

// Mean of foreground sensitivity and specificity; empty denominators
// contribute 1.
inline double balanced_accuracy_fg(const ConfusionCounts& c) {
    double sens = (c.tp[1] + c.fn[1]) == 0 ? 1.0
                                           : static_cast<double>(c.tp[1]) / (c.tp[1] + c.fn[1]);
    double spec = (c.tn[1] + c.fp[1]) == 0 ? 1.0
                                           : static_cast<double>(c.tn[1]) / (c.tn[1] + c.fp[1]);
    return 0.5 * (sens + spec);
}

// Per-pixel argmax of a (1, 2, H, W) probability map; ties go to background.
inline BinaryMask argmax_mask(const Tensor& prob) {
    Shape s = prob.shape();
    if (s.n != 1 || s.c != 2)
        throw_shape_error("argmax_mask: expected a 1x2xHxW map, got ", s.str());
    BinaryMask m(s.h, s.w);
    for (int y = 0; y < s.h; ++y)
        for (int x = 0; x < s.w; ++x)
            m.v[static_cast<size_t>(y) * s.w + x] = prob.at(0, 1, y, x) > prob.at(0, 0, y, x);
    return m;
}

inline BinaryMask mask_from_image(const Image8& img) {
    if (img.ch != 1) throw std::invalid_argument("mask_from_image: mask must be single-channel");
    BinaryMask m(img.h, img.w);
    for (size_t i = 0; i < img.px.size(); ++i) {
        if (img.px[i] != 0 && img.px[i] != 255)
            throw std::invalid_argument("mask_from_image: non-binary mask value " +
                                        std::to_string(img.px[i]));
        m.v[i] = img.px[i] == 255;
    }
    return m;
}

inline Image8 mask_to_image(const BinaryMask& m) {
    Image8 img(m.w, m.h, 1);
    for (size_t i = 0; i < m.v.size(); ++i) img.px[i] = m.v[i] ? 255 : 0;
    return img;
}

// --- dataset evaluation -------------------------------------------------------

struct FrameMetrics {
    std::string id;
    double iou_fg = 0, iou_bg = 0, miou = 0;
    double dsc_fg = 0, dsc_bg = 0, mdsc = 0;
    double bal_acc = 0;
};

struct Report {
    std::vector<FrameMetrics> frames;
    FrameMetrics means;  // id = "mean"; per-frame metrics averaged over frames
    int skipped = 0;
};

inline FrameMetrics frame_metrics(const std::string& id, const ConfusionCounts& c) {
    FrameMetrics f;
    f.id = id;
    f.iou_fg = class_iou(c, 1);
    f.iou_bg = class_iou(c, 0);
    f.miou = mean_iou(c);
    f.dsc_fg = class_dsc(c, 1);
    f.dsc_bg = class_dsc(c, 0);
    f.mdsc = mean_dsc(c);
    f.bal_acc = balanced_accuracy_fg(c);
    return f;
}

inline void finish_report(Report& r) {
    FrameMetrics m;
    m.id = "mean";
    for (const auto& f : r.frames) {
        m.iou_fg += f.iou_fg;
        m.iou_bg += f.iou_bg;
        m.miou += f.miou;
        m.dsc_fg += f.dsc_fg;
        m.dsc_bg += f.dsc_bg;
        m.mdsc += f.mdsc;
        m.bal_acc += f.bal_acc;
    }
    double n = r.frames.empty() ? 1.0 : static_cast<double>(r.frames.size());
    m.iou_fg /= n;
    m.iou_bg /= n;
    m.miou /= n;
    m.dsc_fg /= n;
    m.dsc_bg /= n;
    m.mdsc /= n;
    m.bal_acc /= n;
    r.means = m;
}

// Runs eval-mode inference over a manifest split and tallies the metrics per
// frame; averages are frame means. Unreadable frames are skipped with a
// warning and counted.
inline Report evaluate(Network& net, Runtime<double>& rt, const Manifest& manifest, Split split) {
    Report report;
    for (const auto& entry : manifest.split_entries(split)) {
        Sample s;
        try {
            s = load_sample(manifest.resolve(entry.image_path), manifest.resolve(entry.mask_path),
                            entry.id);
        } catch (const std::exception& e) {
            std::cerr << "warning: skipping frame " << entry.id << ": " << e.what() << "\n";
            ++report.skipped;
            continue;
        }
        Tensor image = normalize(s.image, manifest.means);
        ScalePredictions preds = run_forward(net, rt, image, /*train=*/false);
        ConfusionCounts c = confusion(argmax_mask(preds.final_map), mask_from_image(s.mask));
        report.frames.push_back(frame_metrics(entry.id, c));
    }
    finish_report(report);
    return report;
}

// Fixed column order: frame id, IoU_fg, IoU_bg, mean IoU, DSC_fg, DSC_bg,
// mean DSC, balanced accuracy; final row = means.
inline std::string format_report(const Report& r) {
    std::ostringstream os;
    os.precision(6);
    os << std::fixed;
    os << "frame\tiou_fg\tiou_bg\tmean_iou\tdsc_fg\tdsc_bg\tmean_dsc\tbalanced_accuracy\n";
    auto row = [&os](const FrameMetrics& f) {
        os << f.id << '\t' << f.iou_fg << '\t' << f.iou_bg << '\t' << f.miou << '\t' << f.dsc_fg
           << '\t' << f.dsc_bg << '\t' << f.mdsc << '\t' << f.bal_acc << '\n';
    };
    for (const auto& f : r.frames) row(f);
    row(r.means);
    return os.str();
}

}  // namespace toolnet
