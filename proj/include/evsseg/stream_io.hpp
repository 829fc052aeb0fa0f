// SPDX-License-Identifier: Apache-2.0
//
// Event stream files, label files, windowing and checkpoints.
//
// Text events:   first line `W H ENC` (ENC is `signed` or `zero-one`), then one
//                `t x y p` line per event.
// Binary events: "EVB1", u32 W, u32 H, u8 ENC (0 signed, 1 zero-one), then per
//                event u64 t, u32 x, u32 y, i8 p; all little-endian.
// Checkpoints:   "EVSSEG1", then per tensor u32 name length, name bytes, u32 rank,
//                u32 dims[rank], f32 payload (row-major); all little-endian.
#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "evsseg/event.hpp"
#include "evsseg/model.hpp"

namespace evsseg {

enum class PolarityEncoding { Signed, ZeroOne };

struct EventFileHeader {
    SensorGeometry geometry;
    PolarityEncoding encoding = PolarityEncoding::Signed;
};

struct EventStream {
    EventFileHeader header;
    std::vector<Event> events;
};

/// Reads a text or (when it starts with "EVB1") binary event file.
EventStream parse_event_file(const std::filesystem::path& path);
EventStream parse_event_text(std::istream& in);
EventStream parse_event_binary(std::istream& in);

void write_event_text(std::ostream& out, const EventFileHeader& header, std::span<const Event> events);
void write_event_binary(std::ostream& out, const EventFileHeader& header, std::span<const Event> events);
void write_event_file(const std::filesystem::path& path, const EventFileHeader& header, std::span<const Event> events);

struct WindowedStream {
    std::vector<EventWindow> windows;
    std::size_t dropped = 0;  // trailing events not covered by any window
};

/// Consecutive windows of exactly `n` events starting every `stride` events
/// (stride 0 means n, i.e. non-overlapping). A short remainder is dropped.
WindowedStream window_stream(std::span<const Event> events, const SensorGeometry& geometry, std::size_t n,
                             std::size_t stride = 0);

/// Label file contents: each line is either one window label or N per-event labels.
struct LabelFile {
    std::vector<std::vector<std::uint8_t>> lines;
};

LabelFile read_label_file(const std::filesystem::path& path);
LabelFile parse_label_text(std::istream& in);
void write_window_labels(const std::filesystem::path& path, std::span<const int> labels);
/// One line per group of `n` events; a final shorter line holds any remainder.
void write_event_labels(const std::filesystem::path& path, std::span<const std::uint8_t> labels, std::size_t n);

/// Binary windows and their per-window labels; per-event labels are kept when the file had them.
struct LabeledWindowSet {
    std::vector<EventWindow> windows;
    std::vector<int> labels;
    std::vector<std::vector<std::uint8_t>> event_labels;
};

/// Pairs windows with a label file. Per-event lines are reduced by majority vote.
/// A trailing line shorter than n (the dropped remainder) is ignored.
LabeledWindowSet attach_labels(std::vector<EventWindow> windows, const LabelFile& labels, std::size_t n);

inline constexpr char kCheckpointMagic[] = "EVSSEG1";

/// Writes tensors in the checkpoint format (32-bit payload).
void write_checkpoint_tensors(std::ostream& out, const TensorMap<float>& tensors);
TensorMap<float> read_checkpoint_tensors(std::istream& in);

/// Path of the key=value model config stored next to a checkpoint.
std::filesystem::path config_path_for(const std::filesystem::path& checkpoint);

template <typename Scalar>
void save_checkpoint(const ModelParams<Scalar>& params, const std::filesystem::path& path);

/// Loads tensors and the sidecar config, verifying that they agree.
template <typename Scalar>
ModelParams<Scalar> load_checkpoint(const std::filesystem::path& path);

/// As above, and additionally requires the stored config to equal `expected`.
template <typename Scalar>
ModelParams<Scalar> load_checkpoint(const std::filesystem::path& path, const ModelConfig& expected);

}  // namespace evsseg
