#include "fitq/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

namespace fitq {

Tensor Dataset::example(int64_t i) const {
    const int64_t C = inputs.dim(1), H = inputs.dim(2), W = inputs.dim(3);
    const int64_t stride = C * H * W;
    Tensor out(Shape{1, C, H, W});
    const double* src = inputs.data() + i * stride;
    std::copy(src, src + stride, out.data());
    return out;
}

Tensor Dataset::batch(const std::vector<int64_t>& indices) const {
    const int64_t C = inputs.dim(1), H = inputs.dim(2), W = inputs.dim(3);
    const int64_t stride = C * H * W;
    Tensor out(Shape{static_cast<int64_t>(indices.size()), C, H, W});
    for (size_t k = 0; k < indices.size(); ++k) {
        const double* src = inputs.data() + indices[k] * stride;
        std::copy(src, src + stride, out.data() + static_cast<int64_t>(k) * stride);
    }
    return out;
}

std::vector<int64_t> Dataset::batch_labels(const std::vector<int64_t>& indices) const {
    std::vector<int64_t> out;
    out.reserve(indices.size());
    for (int64_t i : indices) out.push_back(labels[static_cast<size_t>(i)]);
    return out;
}

void Dataset::validate() const {
    if (inputs.rank() != 4) throw ValidationError("dataset inputs must be [N,C,H,W]");
    if (size() < 1) throw ValidationError("dataset is empty");
    if (static_cast<int64_t>(labels.size()) != size()) throw ValidationError("dataset label count mismatch");
    if (num_classes < 2) throw ValidationError("dataset needs at least 2 classes");
    for (int64_t y : labels)
        if (y < 0 || y >= num_classes) throw ValidationError("label out of range: " + std::to_string(y));
}

namespace {

// 10 template drawers on an s-by-s canvas, value 1 on the stroke
void draw_template(int64_t cls, int64_t s, std::vector<double>& img) {
    auto at = [&](int64_t r, int64_t c) -> double& { return img[static_cast<size_t>(r * s + c)]; };
    const int64_t mid = s / 2;
    const int64_t q = std::max<int64_t>(1, s / 4);
    switch (cls % 10) {
        case 0:  // hollow box
            for (int64_t i = 0; i < s; ++i) {
                at(0, i) = at(s - 1, i) = 1.0;
                at(i, 0) = at(i, s - 1) = 1.0;
            }
            break;
        case 1:  // vertical bar
            for (int64_t i = 0; i < s; ++i) at(i, mid) = 1.0;
            break;
        case 2:  // horizontal bar
            for (int64_t i = 0; i < s; ++i) at(mid, i) = 1.0;
            break;
        case 3:  // main diagonal
            for (int64_t i = 0; i < s; ++i) at(i, i) = 1.0;
            break;
        case 4:  // anti-diagonal
            for (int64_t i = 0; i < s; ++i) at(i, s - 1 - i) = 1.0;
            break;
        case 5:  // cross
            for (int64_t i = 0; i < s; ++i) {
                at(i, mid) = 1.0;
                at(mid, i) = 1.0;
            }
            break;
        case 6:  // X
            for (int64_t i = 0; i < s; ++i) {
                at(i, i) = 1.0;
                at(i, s - 1 - i) = 1.0;
            }
            break;
        case 7:  // top bar block
            for (int64_t i = 0; i < q; ++i)
                for (int64_t j = 0; j < s; ++j) at(i, j) = 1.0;
            break;
        case 8:  // left bar block
            for (int64_t i = 0; i < s; ++i)
                for (int64_t j = 0; j < q; ++j) at(i, j) = 1.0;
            break;
        case 9:  // filled center square
            for (int64_t i = q; i < s - q; ++i)
                for (int64_t j = q; j < s - q; ++j) at(i, j) = 1.0;
            break;
    }
}

}  // namespace

Dataset make_synthetic_digits(int64_t num_samples, int64_t num_classes, int64_t image_size, uint64_t seed,
                              std::string split, double noise_stddev) {
    if (image_size < 4) throw ValidationError("make_synthetic_digits: image_size must be >= 4");
    if (num_classes < 2 || num_classes > 10) throw ValidationError("make_synthetic_digits: num_classes must be in [2,10]");
    if (num_samples < 1) throw ValidationError("make_synthetic_digits: num_samples must be >= 1");

    Rng rng(seed);
    const int64_t s = image_size;
    const int64_t shift_range = s >= 6 ? 1 : 0;
    Dataset d;
    d.inputs = Tensor(Shape{num_samples, 1, s, s});
    d.labels.resize(static_cast<size_t>(num_samples));
    d.num_classes = num_classes;
    d.split = std::move(split);

    std::vector<double> canvas(static_cast<size_t>(s * s));
    for (int64_t i = 0; i < num_samples; ++i) {
        const int64_t cls = i % num_classes;
        d.labels[static_cast<size_t>(i)] = cls;
        std::fill(canvas.begin(), canvas.end(), 0.0);
        draw_template(cls, s, canvas);
        const int64_t dr = shift_range ? rng.uniform_int(-shift_range, shift_range) : 0;
        const int64_t dc = shift_range ? rng.uniform_int(-shift_range, shift_range) : 0;
        double* out = d.inputs.data() + i * s * s;
        for (int64_t r = 0; r < s; ++r)
            for (int64_t c = 0; c < s; ++c) {
                const int64_t sr = r - dr, sc = c - dc;
                const double base =
                    (sr >= 0 && sr < s && sc >= 0 && sc < s) ? canvas[static_cast<size_t>(sr * s + sc)] : 0.0;
                out[r * s + c] = 0.8 * base + noise_stddev * rng.normal();
            }
    }
    return d;
}

std::pair<Dataset, Dataset> make_synthetic_split(int64_t n_train, int64_t n_test, int64_t num_classes,
                                                 int64_t image_size, uint64_t seed, double noise_stddev) {
    Dataset train =
        make_synthetic_digits(n_train, num_classes, image_size, derive_seed(seed, "train"), "train", noise_stddev);
    Dataset test =
        make_synthetic_digits(n_test, num_classes, image_size, derive_seed(seed, "test"), "test", noise_stddev);
    return {std::move(train), std::move(test)};
}

namespace {

uint32_t read_be32(std::istream& in, const std::string& path) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    if (!in) throw ValidationError("idx: truncated header in " + path);
    return (static_cast<uint32_t>(b[0]) << 24) | (static_cast<uint32_t>(b[1]) << 16) |
           (static_cast<uint32_t>(b[2]) << 8) | static_cast<uint32_t>(b[3]);
}

}  // namespace

Dataset load_idx(const std::string& images_path, const std::string& labels_path, std::string split, int64_t limit) {
    std::ifstream img(images_path, std::ios::binary);
    if (!img) throw ValidationError("idx: cannot open " + images_path);
    if (read_be32(img, images_path) != 0x00000803u) throw ValidationError("idx: bad image magic in " + images_path);
    const int64_t n_img = read_be32(img, images_path);
    const int64_t rows = read_be32(img, images_path);
    const int64_t cols = read_be32(img, images_path);

    std::ifstream lab(labels_path, std::ios::binary);
    if (!lab) throw ValidationError("idx: cannot open " + labels_path);
    if (read_be32(lab, labels_path) != 0x00000801u) throw ValidationError("idx: bad label magic in " + labels_path);
    const int64_t n_lab = read_be32(lab, labels_path);
    if (n_img != n_lab) throw ValidationError("idx: image/label count mismatch");

    const int64_t n = (limit > 0 && limit < n_img) ? limit : n_img;
    Dataset d;
    d.inputs = Tensor(Shape{n, 1, rows, cols});
    d.labels.resize(static_cast<size_t>(n));
    d.split = std::move(split);

    std::vector<unsigned char> buf(static_cast<size_t>(rows * cols));
    int64_t max_label = 0;
    for (int64_t i = 0; i < n; ++i) {
        img.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
        if (!img) throw ValidationError("idx: truncated image data in " + images_path);
        double* out = d.inputs.data() + i * rows * cols;
        for (size_t j = 0; j < buf.size(); ++j) out[j] = static_cast<double>(buf[j]) / 255.0;
        char y;
        lab.read(&y, 1);
        if (!lab) throw ValidationError("idx: truncated label data in " + labels_path);
        d.labels[static_cast<size_t>(i)] = static_cast<int64_t>(static_cast<unsigned char>(y));
        max_label = std::max(max_label, d.labels[static_cast<size_t>(i)]);
    }
    d.num_classes = std::max<int64_t>(max_label + 1, 2);
    return d;
}

}  // namespace fitq
