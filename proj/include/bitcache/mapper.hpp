#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "bitcache/geometry.hpp"

namespace bitcache {

enum class LayerKind { Conv, MaxPool, AvgPool, FC };
enum class Padding { Valid, Same };

const char* to_string(LayerKind k) noexcept;
const char* to_string(Padding p) noexcept;

/// One network layer. Pooling layers have M == C. A fully connected layer is
/// a 1x1 convolution over a 1x1 input whose C is the flattened input size.
struct LayerDescriptor {
  std::string name;
  std::string group;
  LayerKind kind = LayerKind::Conv;
  std::uint32_t H = 1, W = 1, C = 1;
  std::uint32_t R = 1, S = 1, M = 1;
  std::uint32_t U = 1;
  Padding padding = Padding::Valid;
  bool relu = false;
  bool batchnorm = false;

  bool has_filters() const { return kind == LayerKind::Conv || kind == LayerKind::FC; }
  std::uint32_t out_h() const;
  std::uint32_t out_w() const;
  /// Rows and columns of implicit zero padding before the first input pixel.
  std::uint32_t pad_top() const;
  std::uint32_t pad_left() const;
  std::uint64_t out_pixels() const { return std::uint64_t{out_h()} * out_w(); }
  std::uint64_t conv_count() const { return has_filters() ? out_pixels() * M : 0; }
  std::uint64_t filter_bytes() const {
    return has_filters() ? std::uint64_t{R} * S * C * M : 0;
  }
  std::uint64_t input_bytes() const { return std::uint64_t{H} * W * C; }
  std::uint64_t output_bytes() const { return out_pixels() * M; }
  /// Window bytes shared with the previous output pixel along a row.
  std::uint32_t input_bytes_reused() const;

  /// Throws Error(InvalidConfig) on inconsistent parameters.
  void validate() const;
};

LayerDescriptor make_conv(std::string name, std::uint32_t H, std::uint32_t C, std::uint32_t R,
                          std::uint32_t S, std::uint32_t M, std::uint32_t U = 1,
                          Padding pad = Padding::Same);

/// Contiguous output-pixel range [begin, end).
struct PixelRange {
  std::uint64_t begin = 0;
  std::uint64_t end = 0;
  std::uint64_t size() const { return end - begin; }
  bool operator==(const PixelRange&) const = default;
};

/// Mapper decisions for one layer. Every active array runs the same schedule.
///
/// Filters are laid out one per `padded_channels` lanes, and a way's arrays
/// form one pool of `filters_per_way` filter slots. Output pixels are split
/// evenly over compute units (a unit is a slice, or a group of slices when a
/// pixel's filters need more than one slice). Within a unit, each serial step
/// computes `pixels_per_step` pixels times all M filters.
struct LayoutPlan {
  std::string layer;
  LayerKind kind = LayerKind::Conv;
  std::uint32_t effective_rs = 0;
  std::uint32_t packing_factor = 1;
  std::uint32_t split_factor = 1;
  std::uint32_t effective_channels = 0;
  std::uint32_t padded_channels = 1;
  /// 2 when the padded channels fill two sense-amp-sharing arrays.
  std::uint32_t arrays_per_filter = 1;
  std::uint32_t filters_per_array = 0;
  std::uint32_t lanes_used_per_array = 0;
  std::uint32_t filters_per_way = 0;
  /// Ways that one pixel's M filters occupy (1 when several pixels share a way).
  std::uint32_t ways_per_pixel = 1;
  std::uint32_t pixels_per_way = 0;
  std::uint32_t slices_per_unit = 1;
  std::uint32_t units = 0;
  /// Output-channel passes when one pixel needs more ways than the cache has.
  std::uint32_t passes = 1;
  std::uint32_t pixels_per_step = 0;
  std::uint64_t serial_iterations = 0;
  std::uint64_t steps_per_pass = 0;
  std::uint64_t parallel_convs = 0;
  std::uint64_t arrays_active = 0;
  std::uint64_t conv_count = 0;
  double utilization = 0.0;
  std::vector<PixelRange> per_slice_output_ranges;

  /// Convolutions (or pooled outputs) per array per step.
  double convs_per_array() const {
    return arrays_per_filter == 2 ? 0.5 : static_cast<double>(filters_per_array);
  }
};

/// Balanced contiguous split of `outputs` items over `parts` parts.
std::vector<PixelRange> balanced_ranges(std::uint64_t outputs, std::uint32_t parts);

/// Output-pixel ranges per slice: slices of one unit share their unit's range.
std::vector<PixelRange> partition_outputs(const LayerDescriptor& layer, const GeometryConfig& cfg);

/// Throws Error(Unmappable) when a filter needs more than two arrays.
LayoutPlan plan_layer(const LayerDescriptor& layer, const GeometryConfig& cfg);

/// What one filter slot computes in a given serial step.
struct SlotWork {
  std::uint64_t pixel = 0;  // output pixel index (row-major)
  std::uint32_t m = 0;      // output channel
};

/// Assignment of (unit, way within unit, slot within way, step) to work, or
/// nothing when that slot idles in that step.
std::optional<SlotWork> slot_work(const LayoutPlan& plan, const LayerDescriptor& layer,
                                  std::uint32_t unit, std::uint32_t way, std::uint32_t slot,
                                  std::uint64_t step, const GeometryConfig& cfg);

/// Input tap held by a channel lane: input channel and window offset.
struct Tap {
  std::uint32_t channel = 0;
  std::uint32_t dy = 0;
  std::uint32_t dx = 0;
};

/// Taps of channel lane `lane` (0..padded_channels), one per filter byte on
/// the bit line; padding lanes and tail positions are empty.
std::vector<std::optional<Tap>> lane_taps(const LayoutPlan& plan, const LayerDescriptor& layer,
                                          std::uint32_t lane);

/// Word-line map of a compute array.
struct RegionAllocation {
  std::uint32_t filter_start = 0, filter_rows = 0;
  std::uint32_t partial_start = 0, partial_rows = 24;
  std::uint32_t scratch_start = 0, scratch_rows = 16;
  /// Overlays partial sums, scratch and the first input rows during reduction.
  std::uint32_t reduction_start = 0, reduction_rows = 64;
  std::uint32_t input_start = 0, input_rows = 0;
  std::uint32_t output_start = 0, output_rows = 0;
  /// Outputs of all serial steps do not fit the output region.
  bool output_spills = false;

  std::uint32_t total_rows() const {
    return filter_rows + partial_rows + scratch_rows + input_rows + output_rows;
  }
};

RegionAllocation allocate_regions(const LayoutPlan& plan, const GeometryConfig& cfg);

void to_json(nlohmann::json& j, const LayerDescriptor& l);
void to_json(nlohmann::json& j, const LayoutPlan& p);
void to_json(nlohmann::json& j, const RegionAllocation& r);

}  // namespace bitcache
