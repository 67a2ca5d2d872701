#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <vector>

#include "loqt/matrix.hpp"

namespace loqt {

// 16 quantiles of the standard normal, normalized so the extremes are +-1 and
// exact zero is included (8 non-negative codes including 0, 8 negative codes
// including -1). Derived once from the inverse normal CDF construction and
// pinned here as constants; test_nf4 re-derives them from an independent
// inverse-CDF oracle.
struct Nf4Codebook {
  std::array<float, 16> values;
};

inline Nf4Codebook build_codebook() {
  return Nf4Codebook{{
      -1.0f,
      -0.6961929202079773f,
      -0.5250730514526367f,
      -0.39491748809814453f,
      -0.28444135189056396f,
      -0.18477343022823334f,
      -0.09104999154806137f,
      0.0f,
      0.07958032935857773f,
      0.16093017160892487f,
      0.24611228704452515f,
      0.33791518211364746f,
      0.44070979952812195f,
      0.5626169443130493f,
      0.7229567170143127f,
      1.0f,
  }};
}

namespace detail {
inline const std::array<float, 16>& nf4_values() {
  static const Nf4Codebook cb = build_codebook();
  return cb.values;
}
}  // namespace detail

// Index of the codebook value nearest to x, ties broken toward the lower
// index.
inline int nearest_code(float x, const Nf4Codebook& cb = build_codebook()) {
  int best = 0;
  float best_dist = std::fabs(x - cb.values[0]);
  for (int i = 1; i < 16; ++i) {
    const float d = std::fabs(x - cb.values[i]);
    if (d < best_dist) {
      best_dist = d;
      best = i;
    }
  }
  return best;
}

// Per-chunk affine 8-bit coding of the block scales (chunks of 256 scales).
// Chunk constants stay in 32-bit floats so that degenerate chunks (constant,
// or a single scale) roundtrip exactly.
struct DoubleQuantScales {
  std::size_t count = 0;                  // number of encoded scales
  std::vector<std::uint8_t> scale_codes;  // one per scale
  std::vector<float> chunk_offsets;       // per-chunk minimum
  std::vector<float> chunk_steps;         // per-chunk (max - min) / 255
};

inline constexpr std::size_t kScaleChunk = 256;

inline DoubleQuantScales double_quantize_scales(
    const std::vector<float>& scales) {
  DoubleQuantScales out;
  out.count = scales.size();
  out.scale_codes.resize(scales.size());
  for (std::size_t begin = 0; begin < scales.size(); begin += kScaleChunk) {
    const std::size_t end = std::min(scales.size(), begin + kScaleChunk);
    float lo = scales[begin];
    float hi = scales[begin];
    for (std::size_t i = begin; i < end; ++i) {
      lo = std::min(lo, scales[i]);
      hi = std::max(hi, scales[i]);
    }
    const float step = (hi - lo) / 255.0f;
    out.chunk_offsets.push_back(lo);
    out.chunk_steps.push_back(step);
    for (std::size_t i = begin; i < end; ++i) {
      long code = 0;
      if (step > 0.0f) {
        code = std::lround((scales[i] - lo) / step);
        code = std::max(0L, std::min(255L, code));
      }
      out.scale_codes[i] = static_cast<std::uint8_t>(code);
    }
  }
  return out;
}

inline std::vector<float> dequantize_scales(const DoubleQuantScales& dq) {
  std::vector<float> out(dq.count);
  for (std::size_t i = 0; i < dq.count; ++i) {
    const std::size_t chunk = i / kScaleChunk;
    out[i] = dq.chunk_offsets[chunk] +
             static_cast<float>(dq.scale_codes[i]) * dq.chunk_steps[chunk];
  }
  return out;
}

// NF4 blockwise quantization: 4-bit codes packed two per byte (low nibble
// first) over the row-major flattening, absmax scale per 64-element block.
struct QuantizedMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t block_size = 64;
  std::vector<std::uint8_t> codes;        // packed, ceil(rows*cols / 2) bytes
  std::vector<float> block_scales;        // empty when double_quant is set
  std::optional<DoubleQuantScales> double_quant;

  std::size_t num_elements() const { return rows * cols; }
  std::size_t num_blocks() const {
    return (num_elements() + block_size - 1) / block_size;
  }

  int code_at(std::size_t idx) const {
    const std::uint8_t byte = codes[idx / 2];
    return idx % 2 == 0 ? (byte & 0x0f) : (byte >> 4);
  }

  void set_code(std::size_t idx, int code) {
    std::uint8_t& byte = codes[idx / 2];
    if (idx % 2 == 0) {
      byte = static_cast<std::uint8_t>((byte & 0xf0) | (code & 0x0f));
    } else {
      byte = static_cast<std::uint8_t>((byte & 0x0f) | ((code & 0x0f) << 4));
    }
  }

  float scale_for_block(std::size_t b) const {
    if (double_quant.has_value()) {
      const DoubleQuantScales& dq = *double_quant;
      const std::size_t chunk = b / kScaleChunk;
      return dq.chunk_offsets[chunk] +
             static_cast<float>(dq.scale_codes[b]) * dq.chunk_steps[chunk];
    }
    return block_scales[b];
  }
};

inline QuantizedMatrix quantize(const Matrix& w) {
  const Nf4Codebook cb = build_codebook();
  QuantizedMatrix q;
  q.rows = w.rows;
  q.cols = w.cols;
  q.codes.assign((w.size() + 1) / 2, 0);
  q.block_scales.resize(q.num_blocks());
  for (std::size_t b = 0; b < q.num_blocks(); ++b) {
    const std::size_t begin = b * q.block_size;
    const std::size_t end = std::min(w.size(), begin + q.block_size);
    float absmax = 0.0f;
    for (std::size_t i = begin; i < end; ++i) {
      absmax = std::max(absmax, std::fabs(w.data[i]));
    }
    q.block_scales[b] = absmax;
    if (absmax == 0.0f) {
      // All-zero block: scale 0, and every code decodes to 0 via the zero
      // codebook entry.
      for (std::size_t i = begin; i < end; ++i) q.set_code(i, 7);
      continue;
    }
    for (std::size_t i = begin; i < end; ++i) {
      q.set_code(i, nearest_code(w.data[i] / absmax, cb));
    }
  }
  return q;
}

// quantize, then compress the block scales with double quantization.
inline QuantizedMatrix quantize(const Matrix& w, bool double_quant_scales) {
  QuantizedMatrix q = quantize(w);
  if (double_quant_scales) {
    q.double_quant = double_quantize_scales(q.block_scales);
    q.block_scales.clear();
  }
  return q;
}

inline Matrix dequantize(const QuantizedMatrix& q) {
  if (q.block_size == 0 || q.codes.size() != (q.num_elements() + 1) / 2) {
    throw std::runtime_error(
        "dequantize: corrupted quantized matrix (code bytes do not match " +
        std::to_string(q.rows) + "x" + std::to_string(q.cols) + ")");
  }
  const std::size_t scale_count = q.double_quant.has_value()
                                      ? q.double_quant->count
                                      : q.block_scales.size();
  if (scale_count != q.num_blocks()) {
    throw std::runtime_error(
        "dequantize: corrupted quantized matrix (scale count " +
        std::to_string(scale_count) + " for " +
        std::to_string(q.num_blocks()) + " blocks)");
  }
  const std::array<float, 16>& cb = detail::nf4_values();
  Matrix out(q.rows, q.cols);
  for (std::size_t b = 0; b < q.num_blocks(); ++b) {
    const std::size_t begin = b * q.block_size;
    const std::size_t end = std::min(out.size(), begin + q.block_size);
    const float scale = q.scale_for_block(b);
    for (std::size_t i = begin; i < end; ++i) {
      out.data[i] = scale * cb[static_cast<std::size_t>(q.code_at(i))];
    }
  }
  return out;
}

// Frobenius norm of the NF4 roundtrip residual ||deq(quant(w)) - w||_F.
inline double quantization_error(const Matrix& w) {
  return frobenius_distance(dequantize(quantize(w)), w);
}

}  // namespace loqt
