#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace ppgauth {

// Row-major float matrix as stored on disk: 8-byte header (H, W as
// little-endian uint32) followed by H*W little-endian float32 values.
struct FloatMatrix {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<float> data;
};

void write_matrix(const std::filesystem::path& path, std::size_t height, std::size_t width,
                  std::span<const float> data);
FloatMatrix read_matrix(const std::filesystem::path& path);

// One segment of a scalogram archive. The raw segment is stored next to its
// scalogram as a 1 x N matrix so the sequence branch can be fed from the
// archive alone.
struct ArchiveEntry {
  std::string scalogram_file;
  std::string segment_file;
  std::string subject_id;
  int label = 0;
  std::size_t segment_index = 0;  // within its recording
  std::size_t start_index = 0;    // first sample in the recording
  bool padded = false;
  double sample_rate_hz = 0.0;
};

struct ArchiveIndex {
  int version = 1;
  std::vector<ArchiveEntry> entries;

  std::size_t num_classes() const;
};

// index.json inside the archive directory.
void save_archive_index(const std::filesystem::path& dir, const ArchiveIndex& index);
ArchiveIndex load_archive_index(const std::filesystem::path& dir);

}  // namespace ppgauth
