#pragma once

#include <span>
#include <vector>

#include "swtt/autodiff.hpp"
#include "swtt/codec.hpp"

namespace swtt {

struct Position2D {
    double row = 0.0;
    double col = 0.0;
};

// Token (r, c) of an h x w grid sits at (r * max_size / h, c * max_size / w),
// so every scale spans the same coordinate range.
std::vector<Position2D> normalized_positions(GridSize grid, std::size_t max_size);

struct RopeTables {
    Tensor cos;  // [rows, head_dim / 2]
    Tensor sin;
};

// First half of each head rotates with the row coordinate, second half with
// the column; pair p of an axis with d/2 dims uses frequency theta^(-2p/(d/2)).
RopeTables rope2d_tables(std::span<const Position2D> positions, std::size_t head_dim, double theta);

// Rotates every head of x[R, heads*head_dim]; head_dim must be divisible by 4.
Var rope2d_apply(const Var& x, std::span<const Position2D> positions, std::size_t heads, double theta);

}  // namespace swtt
