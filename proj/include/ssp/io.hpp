#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ssp/flow.hpp"
#include "ssp/geometry.hpp"
#include "ssp/similarity.hpp"
#include "ssp/synth.hpp"
#include "ssp/tensor.hpp"

namespace ssp {

// ---------------------------------------------------------------------------
// Tensor file format: magic "STEN", version byte (1), dtype byte (0 = f32,
// 1 = u8, 2 = i32), rank byte, one reserved zero byte, rank x u64 little-
// endian extents, then the row-major little-endian payload. Round trips are
// bit-exact.
// ---------------------------------------------------------------------------

enum class Dtype : std::uint8_t { f32 = 0, u8 = 1, i32 = 2 };

std::size_t dtype_width(Dtype d);

/// Raw record: header plus payload bytes, dtype-agnostic.
struct TensorRecord {
    Dtype dtype = Dtype::f32;
    std::vector<std::size_t> extents;
    std::vector<std::uint8_t> payload;

    std::size_t element_count() const;
};

void record_write(std::ostream& out, const TensorRecord& rec);
TensorRecord record_read(std::istream& in);

void tensor_write(const std::filesystem::path& path, const Tensor& t);
void tensor_write(std::ostream& out, const Tensor& t);
Tensor tensor_read(const std::filesystem::path& path, Tag tag = Tag::image);
Tensor tensor_read(std::istream& in, Tag tag = Tag::image);

void labelmap_write(const std::filesystem::path& path, const LabelMap& l);
LabelMap labelmap_read(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Binary portable pixmaps: frames as P6 (maxval 255), labels as P5.
// Conversion to [0,1] floats happens at load.
// ---------------------------------------------------------------------------

void ppm_write(const std::filesystem::path& path, const Tensor& image);
Tensor ppm_read(const std::filesystem::path& path);
void pgm_write(const std::filesystem::path& path, const LabelMap& labels);
LabelMap pgm_read(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Sequence manifest (JSON). "labels" maps frame indices to files and may be
// dense; the optional "annotated" list marks which frames count as labeled
// for sparse-annotation emulation (defaults to every labeled frame).
// ---------------------------------------------------------------------------

struct SequenceManifest {
    std::filesystem::path root;
    std::string name;
    std::vector<std::string> frames;
    std::map<std::size_t, std::string> labels;
    std::vector<std::size_t> annotated;
    std::vector<Homography> homographies; // empty = absent
    std::vector<std::string> flows_fwd;   // empty = absent
    std::vector<std::string> flows_bwd;
    std::vector<std::string> classes;
    std::uint64_t seed = 0;
};

SequenceManifest manifest_load(const std::filesystem::path& dir);
void manifest_save(const SequenceManifest& manifest);

/// A data directory is either a single sequence (contains manifest.json) or
/// a directory of sequence subdirectories; results are sorted by name.
std::vector<std::filesystem::path> discover_sequences(
    const std::filesystem::path& data_dir);

/// Fully loaded sequence, ready for the pipeline.
struct LoadedSequence {
    SequenceManifest manifest;
    std::vector<Tensor> frames;
    std::map<std::size_t, LabelMap> labels;
    std::vector<FlowField> flows_fwd;
    std::vector<FlowField> flows_bwd;
};

LoadedSequence sequence_load(const std::filesystem::path& dir);

/// Materializes a synthetic sequence: P6 frames, P5 labels for every frame,
/// flow tensors, homographies and the annotated list in the manifest.
void sequence_save(const SyntheticSequence& seq, const std::filesystem::path& dir);

// ---------------------------------------------------------------------------
// Checkpoint: a small header record (mode, seed, epoch, layer geometry)
// followed by parameter blobs in the tensor file format.
// ---------------------------------------------------------------------------

struct Checkpoint {
    std::string mode = "base"; // "base" | "kd"
    std::uint64_t seed = 0;
    std::uint64_t epoch = 0;
    bool one_step = false;
    SimilarityLayer layer;
    LinearHead head;
};

void checkpoint_save(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint checkpoint_load(const std::filesystem::path& path);

} // namespace ssp
