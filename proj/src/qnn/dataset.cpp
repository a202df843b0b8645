#include <fstream>
#include <iterator>

#include "rowflip/errors.hpp"
#include "rowflip/qnn.hpp"
#include "rowflip/rng.hpp"

namespace rf::qnn {

Tensor gather_rows(const Tensor& x, const std::vector<std::size_t>& rows) {
    if (x.shape.empty()) throw ShapeError("cannot gather rows of a scalar tensor");
    const std::size_t n = static_cast<std::size_t>(x.shape[0]);
    const std::size_t per = n == 0 ? 0 : x.values.size() / n;
    Tensor out;
    out.shape = x.shape;
    out.shape[0] = static_cast<int>(rows.size());
    out.values.resize(rows.size() * per);
    for (std::size_t r = 0; r < rows.size(); ++r) {
        if (rows[r] >= n) throw OutOfRangeError("row index out of range");
        std::copy_n(x.values.data() + rows[r] * per, per, out.values.data() + r * per);
    }
    return out;
}

Dataset make_blobs(const BlobSpec& spec) {
    if (spec.classes < 2) throw ConfigError("blob dataset needs at least 2 classes");
    if (spec.train_per_class < 1 || spec.test_per_class < 1) throw ConfigError("blob split sizes must be positive");
    Rng rng(spec.seed);
    const int dim = spec.input.size();
    std::vector<std::vector<double>> centers(spec.classes, std::vector<double>(dim));
    for (auto& c : centers)
        for (auto& v : c) v = spec.center_offset + spec.center_scale * rng.normal();

    auto make_split = [&](int per_class, Tensor& x, std::vector<int>& y) {
        std::vector<int> labels;
        for (int c = 0; c < spec.classes; ++c)
            for (int k = 0; k < per_class; ++k) labels.push_back(c);
        rng.shuffle(labels);
        x = Tensor::zeros({static_cast<int>(labels.size()), spec.input.c, spec.input.h, spec.input.w});
        y = labels;
        for (std::size_t s = 0; s < labels.size(); ++s)
            for (int d = 0; d < dim; ++d)
                x.values[s * dim + d] = centers[labels[s]][d] + spec.noise * rng.normal();
    };

    Dataset ds;
    ds.input = spec.input;
    ds.class_count = spec.classes;
    make_split(spec.train_per_class, ds.train_x, ds.train_y);
    make_split(spec.test_per_class, ds.test_x, ds.test_y);
    return ds;
}

namespace {

std::vector<std::uint8_t> read_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ConfigError("cannot open dataset file: " + path);
    return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(f), {});
}

std::uint32_t be32(const std::vector<std::uint8_t>& b, std::size_t off) {
    if (off + 4 > b.size()) throw FormatError("truncated IDX header");
    return (std::uint32_t{b[off]} << 24) | (std::uint32_t{b[off + 1]} << 16) | (std::uint32_t{b[off + 2]} << 8) |
           std::uint32_t{b[off + 3]};
}

void read_idx_pair(const std::string& img_path, const std::string& lbl_path, Tensor& x, std::vector<int>& y,
                   Shape3& shape) {
    const auto img = read_file(img_path);
    const auto lbl = read_file(lbl_path);
    if (be32(img, 0) != 0x00000803) throw FormatError("not an IDX image file: " + img_path);
    if (be32(lbl, 0) != 0x00000801) throw FormatError("not an IDX label file: " + lbl_path);
    const std::uint32_t n = be32(img, 4), rows = be32(img, 8), cols = be32(img, 12);
    if (be32(lbl, 4) != n) throw FormatError("IDX image and label counts differ");
    const std::size_t per = static_cast<std::size_t>(rows) * cols;
    if (img.size() < 16 + n * per || lbl.size() < 8 + n) throw FormatError("truncated IDX payload");
    shape = {1, static_cast<int>(rows), static_cast<int>(cols)};
    x = Tensor::zeros({static_cast<int>(n), 1, static_cast<int>(rows), static_cast<int>(cols)});
    for (std::size_t k = 0; k < n * per; ++k) x.values[k] = img[16 + k] / 255.0;
    y.resize(n);
    for (std::size_t k = 0; k < n; ++k) y[k] = lbl[8 + k];
}

}  // namespace

Dataset load_idx(const std::string& train_images, const std::string& train_labels, const std::string& test_images,
                 const std::string& test_labels) {
    Dataset ds;
    Shape3 s1, s2;
    read_idx_pair(train_images, train_labels, ds.train_x, ds.train_y, s1);
    read_idx_pair(test_images, test_labels, ds.test_x, ds.test_y, s2);
    if (!(s1 == s2)) throw FormatError("IDX train and test image sizes differ");
    ds.input = s1;
    int mx = 0;
    for (int v : ds.train_y) mx = std::max(mx, v);
    for (int v : ds.test_y) mx = std::max(mx, v);
    ds.class_count = mx + 1;
    if (ds.class_count < 2) throw FormatError("IDX labels name fewer than 2 classes");
    return ds;
}

}  // namespace rf::qnn
