#pragma once

#include <compare>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "rowflip/parallel.hpp"

namespace rf::qnn {

// Dense row-major real tensor.
struct Tensor {
    std::vector<int> shape;
    std::vector<double> values;

    Tensor() = default;
    Tensor(std::vector<int> s, std::vector<double> v);
    static Tensor zeros(std::vector<int> s);

    std::size_t size() const { return values.size(); }
    // Number of rows along the leading dimension.
    int rows() const { return shape.empty() ? 0 : shape.front(); }
    // Throws ShapeError unless the shape product matches and all values are finite.
    void validate() const;
};

struct Shape3 {
    int c = 1, h = 1, w = 1;
    int size() const { return c * h * w; }
    friend bool operator==(const Shape3&, const Shape3&) = default;
};

enum class LayerKind : std::uint32_t {
    FullyConnected = 1,
    Conv2d = 2,
    Relu = 3,
    MaxPool = 4,
    ResidualAdd = 5,
    Flatten = 6,
};

const char* kind_name(LayerKind k);

struct LayerSpec {
    LayerKind kind = LayerKind::Relu;
    Shape3 in, out;
    int kernel = 0;
    int stride = 1;
    int pad = 0;
    // Residual-add only: index of the layer whose output is added, -1 for the model input.
    int skip_from = -1;

    bool weighted() const { return kind == LayerKind::FullyConnected || kind == LayerKind::Conv2d; }
    std::size_t weight_count() const;
    std::size_t bias_count() const;
};

struct Architecture {
    Shape3 input;
    int class_count = 0;
    std::vector<LayerSpec> layers;

    std::size_t parameter_count() const;
    void validate() const;
};

// Appends layers while tracking the running activation shape.
class ModelBuilder {
public:
    explicit ModelBuilder(Shape3 input) : input_(input), cur_(input) {}

    ModelBuilder& fc(int out);
    ModelBuilder& conv(int out_channels, int kernel, int stride = 1, int pad = 0);
    ModelBuilder& relu();
    ModelBuilder& maxpool(int kernel, int stride);
    ModelBuilder& residual(int from);
    ModelBuilder& flatten();
    int last_index() const { return static_cast<int>(layers_.size()) - 1; }

    // Final activation must be a flat vector; its length is the class count.
    Architecture build() const;

private:
    Shape3 shape_after(int idx) const;

    Shape3 input_, cur_;
    std::vector<LayerSpec> layers_;
};

struct QuantizedLayer {
    LayerSpec spec;
    std::vector<std::int32_t> weight_q;  // FC: [out][in], conv: [oc][ic][ky][kx]
    double delta_w = 0.0;
    std::vector<double> bias;
};

struct QuantizedModel {
    int bits = 8;
    int class_count = 0;
    Shape3 input;
    std::vector<QuantizedLayer> layers;

    Architecture architecture() const;
    std::vector<std::size_t> weighted_layers() const;
    std::size_t weight_count() const;
    void validate() const;
    friend bool operator==(const QuantizedModel&, const QuantizedModel&);
};

// Stable digest of all model state; equal digests mean bit-identical models.
std::uint64_t model_hash(const QuantizedModel& m);

struct BitRef {
    std::size_t layer = 0;
    std::size_t index = 0;
    int bit = 0;
    friend auto operator<=>(const BitRef&, const BitRef&) = default;
};

// ---- Quantization and two's complement ----

struct Quantized {
    std::vector<std::int32_t> q;
    double delta_w = 0.0;
};

std::int64_t round_half_away(double x);
// delta_w = max(w) / (2^(bits-1) - 1); q = clamp(round(w / delta_w)).
Quantized quantize(const std::vector<double>& w, int bits);
Quantized quantize(const Tensor& w, int bits);
std::vector<double> dequantize(const std::vector<std::int32_t>& q, double delta_w);

// bits are given most significant first: b_{N-1} .. b_0.
std::int32_t decode_bits(const std::vector<int>& bits_msb_first);
std::vector<int> encode_bits(std::int32_t value, int bits);
int bit_of(std::int32_t value, int bit);
// Value after toggling one bit of its `bits`-wide two's complement encoding.
std::int32_t flip_value(std::int32_t value, int bit, int bits);
// Coefficient of bit i in the two's complement sum: 2^i, or -2^(N-1) for the sign bit.
double bit_coefficient(int bit, int bits);

void flip_bit(QuantizedModel& m, const BitRef& ref);
void check_ref(const QuantizedModel& m, const BitRef& ref);

// ---- Real-valued parameters and kernels ----

struct Params {
    std::vector<std::vector<double>> w;
    std::vector<std::vector<double>> b;

    static Params zeros_like(const Architecture& a);
};

Params dequantize(const QuantizedModel& m);
QuantizedModel quantize_params(const Architecture& a, const Params& p, int bits);

struct LossAcc {
    double loss = 0.0;
    double acc = 0.0;
    std::size_t correct = 0;
    std::size_t count = 0;
};

struct Gradients {
    Params grad;  // dL/dw with respect to the dequantized weights
    LossAcc stats;
};

Tensor forward(const Architecture& a, const Params& p, const Tensor& batch, Exec exec = Exec::Parallel);
LossAcc loss_and_accuracy(const Architecture& a, const Params& p, const Tensor& inputs,
                          const std::vector<int>& labels, Exec exec = Exec::Parallel);
Gradients loss_gradients(const Architecture& a, const Params& p, const Tensor& inputs,
                         const std::vector<int>& labels, Exec exec = Exec::Parallel);

// Activations of a fixed batch, reused to score single-weight changes without
// recomputing layers ahead of the changed one.
class CachedBatch {
public:
    CachedBatch(const Architecture& a, const Params& p, const Tensor& inputs, const std::vector<int>& labels,
                Exec exec = Exec::Parallel);

    const LossAcc& base() const;
    std::size_t size() const;
    // Equals loss_and_accuracy with p.w[layer][index] replaced by value, bit for bit.
    LossAcc with_weight(std::size_t layer, std::size_t index, double value) const;

private:
    struct Impl;
    std::shared_ptr<const Impl> impl_;
};

Tensor forward(const QuantizedModel& m, const Tensor& batch, Exec exec = Exec::Parallel);
LossAcc loss_and_accuracy(const QuantizedModel& m, const Tensor& inputs, const std::vector<int>& labels,
                          Exec exec = Exec::Parallel);
Gradients weight_gradients(const QuantizedModel& m, const Tensor& inputs, const std::vector<int>& labels,
                           Exec exec = Exec::Parallel);

// Per weighted layer, dL/db for every (index, bit) stored at [index * bits + bit].
struct BitGradients {
    int bits = 8;
    std::vector<std::vector<double>> g;  // indexed by model layer; empty for unweighted layers

    double at(const BitRef& r) const { return g[r.layer][r.index * bits + r.bit]; }
};

BitGradients bit_gradients(const Params& weight_grads, const QuantizedModel& m);

// ---- Datasets ----

struct Dataset {
    Shape3 input;
    int class_count = 0;
    Tensor train_x;
    std::vector<int> train_y;
    Tensor test_x;
    std::vector<int> test_y;
};

struct BlobSpec {
    int classes = 10;
    Shape3 input{1, 12, 12};
    int train_per_class = 200;
    int test_per_class = 100;
    double center_offset = 0.0;
    double center_scale = 1.0;
    double noise = 1.0;
    std::uint64_t seed = 1;
};

Dataset make_blobs(const BlobSpec& spec);
// MNIST-style IDX files (ubyte images and labels); pixels scaled to [0,1].
Dataset load_idx(const std::string& train_images, const std::string& train_labels,
                 const std::string& test_images, const std::string& test_labels);
Tensor gather_rows(const Tensor& x, const std::vector<std::size_t>& rows);

// ---- Training ----

struct TrainConfig {
    int epochs = 20;
    int batch = 64;
    double lr = 0.1;
    double momentum = 0.9;
    double weight_decay = 0.0;
    int bits = 8;
    double accuracy_floor = 0.0;  // on the test split
    Exec exec = Exec::Parallel;
};

struct TrainResult {
    QuantizedModel model;
    double test_acc = 0.0;
    std::vector<double> epoch_loss;
};

Params init_params(const Architecture& a, std::uint64_t seed);
// Quantization-aware SGD with a straight-through estimator.
TrainResult train_small(const Architecture& a, const Dataset& d, const TrainConfig& cfg, std::uint64_t seed);

// ---- Checkpoint (QNN1) ----

inline constexpr std::size_t kPageBytes = 4096;

std::vector<std::uint8_t> serialize_checkpoint(const QuantizedModel& m);
QuantizedModel parse_checkpoint(const std::vector<std::uint8_t>& bytes);
void save_checkpoint(const QuantizedModel& m, const std::string& path);
QuantizedModel load_checkpoint(const std::string& path);
// Byte offset of the weight block inside the checkpoint (a page multiple).
std::size_t checkpoint_weight_offset(const QuantizedModel& m);
// weight_q bytes of every weighted layer, in layer order, without padding.
std::vector<std::uint8_t> weight_block(const QuantizedModel& m);
void load_weight_block(QuantizedModel& m, const std::uint8_t* data, std::size_t n);

}  // namespace rf::qnn
