#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "lotmerge/netspec.hpp"
#include "lotmerge/toybench.hpp"

namespace helpers {

using namespace lotmerge;

/// MatMul(3x4) -> Bias -> ReLU -> Scale trunk with one frozen head.
inline NetworkSpec small_spec() {
    NetworkSpec spec;
    spec.input_dim = 3;
    spec.units = {
        {"fc1", UnitKind::MatMul, 3, 4},
        {"b1", UnitKind::Bias, 1, 4},
        {"act", UnitKind::Activation, 0, 0, ActivationTag::Relu},
        {"s1", UnitKind::Scale, 1, 4},
    };
    spec.heads = {{"head_t0", UnitKind::Frozen, 4, 2}};
    spec.validate();
    return spec;
}

inline Matrix random_matrix(Rng& rng, Index rows, Index cols, double scale = 1.0) {
    Matrix m(rows, cols);
    for (Index r = 0; r < rows; ++r)
        for (Index c = 0; c < cols; ++c) m(r, c) = scale * rng.gaussian();
    return m;
}

/// Entries are dyadic rationals (multiples of 2^-10 within [-8, 8]), so sums
/// and differences of two checkpoints stay exact in double precision.
inline Matrix random_dyadic(Rng& rng, Index rows, Index cols) {
    Matrix m(rows, cols);
    for (Index r = 0; r < rows; ++r)
        for (Index c = 0; c < cols; ++c) {
            m(r, c) = (static_cast<double>(rng.uniform_int(16385)) - 8192.0) / 1024.0;
        }
    return m;
}

inline Checkpoint random_checkpoint(const NetworkSpec& spec, Rng& rng, bool dyadic = false) {
    std::map<std::string, Matrix> params;
    auto fill = [&](const Unit& u) {
        if (!u.has_params()) return;
        params[u.id] = dyadic ? random_dyadic(rng, u.rows, u.cols)
                              : random_matrix(rng, u.rows, u.cols);
    };
    for (const auto& u : spec.units) fill(u);
    for (const auto& h : spec.heads) fill(h);
    return make_checkpoint(spec, std::move(params));
}

inline std::filesystem::path temp_dir(const std::string& name) {
    const auto dir = std::filesystem::temp_directory_path() / ("lotmerge_test_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

}  // namespace helpers
