#include "ftnn/tensor.hpp"

#include <atomic>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <sstream>
#include <thread>

#include "ftnn/error.hpp"

namespace ftnn {

namespace {

std::size_t product(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return n;
}

void check_positive_dims(const std::vector<std::size_t>& shape) {
    for (std::size_t d : shape)
        if (d == 0) throw DimensionError("tensor shape has a zero dimension");
}

std::atomic<int> g_threads{0};

int initial_thread_count() {
    if (const char* env = std::getenv("FTNN_THREADS")) {
        int n = std::atoi(env);
        if (n >= 1) return n;
    }
    const unsigned hw = std::thread::hardware_concurrency();
    return hw >= 1 ? static_cast<int>(hw) : 1;
}

/// Run fn(begin, end) over [0, total) split across the configured worker
/// count.  Partitioning is by contiguous row blocks, so each output element
/// is produced by the same arithmetic regardless of worker count.
template <typename Fn>
void parallel_rows(std::size_t total, const Fn& fn) {
    const int threads = thread_count();
    if (threads <= 1 || total < 64) {
        fn(std::size_t{0}, total);
        return;
    }
    const std::size_t n = static_cast<std::size_t>(threads);
    std::vector<std::thread> pool;
    pool.reserve(n - 1);
    const std::size_t chunk = (total + n - 1) / n;
    for (std::size_t t = 1; t < n; ++t) {
        const std::size_t begin = t * chunk;
        if (begin >= total) break;
        const std::size_t end = std::min(total, begin + chunk);
        pool.emplace_back([&fn, begin, end] { fn(begin, end); });
    }
    fn(std::size_t{0}, std::min(total, chunk));
    for (auto& th : pool) th.join();
}

void require_2d(const Tensor& t, const char* who) {
    if (t.rank() != 2) {
        throw DimensionError(std::string(who) + ": expected rank-2 tensor, got shape " + t.shape_str());
    }
}

}  // namespace

int thread_count() {
    int n = g_threads.load(std::memory_order_relaxed);
    if (n == 0) {
        n = initial_thread_count();
        g_threads.store(n, std::memory_order_relaxed);
    }
    return n;
}

void set_thread_count(int n) {
    g_threads.store(n >= 1 ? n : 1, std::memory_order_relaxed);
}

Tensor::Tensor(std::vector<std::size_t> shape) : shape_(std::move(shape)) {
    check_positive_dims(shape_);
    data_.assign(product(shape_), 0.0);
    refresh_cache();
}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
    check_positive_dims(shape_);
    if (product(shape_) != data_.size()) {
        throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                             " does not match shape " + shape_str());
    }
    refresh_cache();
}

Tensor Tensor::identity(std::size_t n) {
    Tensor t({n, n});
    for (std::size_t i = 0; i < n; ++i) t.at(i, i) = 1.0;
    return t;
}

std::size_t Tensor::rows() const {
    require_2d(*this, "rows");
    return shape_[0];
}

std::size_t Tensor::cols() const {
    require_2d(*this, "cols");
    return shape_[1];
}

void Tensor::refresh_cache() { cols_cache_ = shape_.empty() ? 0 : shape_.back(); }

Tensor Tensor::reshaped(std::vector<std::size_t> new_shape) const& {
    Tensor copy = *this;
    copy.set_shape(std::move(new_shape));
    return copy;
}

Tensor Tensor::reshaped(std::vector<std::size_t> new_shape) && {
    set_shape(std::move(new_shape));
    return std::move(*this);
}

void Tensor::set_shape(std::vector<std::size_t> new_shape) {
    check_positive_dims(new_shape);
    if (product(new_shape) != data_.size()) {
        throw DimensionError("reshape to incompatible total size");
    }
    shape_ = std::move(new_shape);
    refresh_cache();
}

std::string Tensor::shape_str() const {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < shape_.size(); ++i) os << (i ? "x" : "") << shape_[i];
    os << "]";
    return os.str();
}

bool Tensor::all_finite() const {
    for (double v : data_)
        if (!std::isfinite(v)) return false;
    return true;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_2d(a, "matmul");
    require_2d(b, "matmul");
    if (a.cols() != b.rows()) {
        throw DimensionError("matmul: inner dimensions disagree, " + a.shape_str() + " * " + b.shape_str());
    }
    const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    Tensor c({m, n});
    const double* pa = a.data();
    const double* pb = b.data();
    double* pc = c.data();
    parallel_rows(m, [&](std::size_t begin, std::size_t end) {
        for (std::size_t i = begin; i < end; ++i) {
            double* crow = pc + i * n;
            const double* arow = pa + i * k;
            for (std::size_t t = 0; t < k; ++t) {
                const double av = arow[t];
                const double* brow = pb + t * n;
                for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
            }
        }
    });
    return c;
}

Tensor matmul_transposed_b(const Tensor& a, const Tensor& b) {
    require_2d(a, "matmul_transposed_b");
    require_2d(b, "matmul_transposed_b");
    if (a.cols() != b.cols()) {
        throw DimensionError("matmul_transposed_b: inner dimensions disagree, " + a.shape_str() + " * " +
                             b.shape_str() + "^T");
    }
    const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
    Tensor c({m, n});
    const double* pa = a.data();
    const double* pb = b.data();
    double* pc = c.data();
    parallel_rows(m, [&](std::size_t begin, std::size_t end) {
        for (std::size_t i = begin; i < end; ++i) {
            const double* arow = pa + i * k;
            double* crow = pc + i * n;
            for (std::size_t j = 0; j < n; ++j) {
                const double* brow = pb + j * k;
                double acc = 0.0;
                for (std::size_t t = 0; t < k; ++t) acc += arow[t] * brow[t];
                crow[j] = acc;
            }
        }
    });
    return c;
}

Tensor matmul_transposed_a(const Tensor& a, const Tensor& b) {
    require_2d(a, "matmul_transposed_a");
    require_2d(b, "matmul_transposed_a");
    if (a.rows() != b.rows()) {
        throw DimensionError("matmul_transposed_a: inner dimensions disagree, " + a.shape_str() + "^T * " +
                             b.shape_str());
    }
    const std::size_t k = a.rows(), m = a.cols(), n = b.cols();
    Tensor c({m, n});
    const double* pa = a.data();
    const double* pb = b.data();
    double* pc = c.data();
    parallel_rows(m, [&](std::size_t begin, std::size_t end) {
        for (std::size_t t = 0; t < k; ++t) {
            const double* arow = pa + t * m;
            const double* brow = pb + t * n;
            for (std::size_t i = begin; i < end; ++i) {
                const double av = arow[i];
                double* crow = pc + i * n;
                for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
            }
        }
    });
    return c;
}

Tensor elementwise_map(const Tensor& x, const std::function<double(double)>& f) {
    Tensor out = x;
    double* p = out.data();
    for (std::size_t i = 0; i < out.size(); ++i) p[i] = f(p[i]);
    return out;
}

std::vector<int> argmax_rows(const Tensor& x) {
    if (x.size() == 0) throw DomainError("argmax_rows: empty tensor");
    require_2d(x, "argmax_rows");
    std::vector<int> out(x.rows());
    for (std::size_t i = 0; i < x.rows(); ++i) {
        const double* row = x.data() + i * x.cols();
        int best = 0;
        for (std::size_t j = 1; j < x.cols(); ++j)
            if (row[j] > row[best]) best = static_cast<int>(j);
        out[i] = best;
    }
    return out;
}

Tensor uniform_init(SeededRng& rng, std::vector<std::size_t> shape, double bound) {
    if (!(bound > 0.0)) throw DomainError("uniform_init: bound must be positive");
    Tensor t(std::move(shape));
    double* p = t.data();
    for (std::size_t i = 0; i < t.size(); ++i) p[i] = rng.uniform(-bound, bound);
    return t;
}

void add_row_vector(Tensor& x, const Tensor& row) {
    require_2d(x, "add_row_vector");
    if (row.size() != x.cols()) {
        throw DimensionError("add_row_vector: row length " + row.shape_str() + " vs " + x.shape_str());
    }
    const double* pr = row.data();
    double* px = x.data();
    const std::size_t n = x.cols();
    for (std::size_t i = 0; i < x.rows(); ++i) {
        double* xrow = px + i * n;
        for (std::size_t j = 0; j < n; ++j) xrow[j] += pr[j];
    }
}

Tensor column_sums(const Tensor& x) {
    require_2d(x, "column_sums");
    Tensor out({x.cols()});
    const std::size_t n = x.cols();
    double* po = out.data();
    const double* px = x.data();
    for (std::size_t i = 0; i < x.rows(); ++i) {
        const double* row = px + i * n;
        for (std::size_t j = 0; j < n; ++j) po[j] += row[j];
    }
    return out;
}

double relu(double v) { return v > 0.0 ? v : 0.0; }

std::uint64_t fnv1a_bytes(const void* bytes, std::size_t n, std::uint64_t h) {
    const auto* p = static_cast<const unsigned char*>(bytes);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001B3ULL;
    }
    return h;
}

std::uint64_t tensor_hash(const Tensor& t, std::uint64_t h) {
    return fnv1a_bytes(t.data(), t.size() * sizeof(double), h);
}

}  // namespace ftnn
