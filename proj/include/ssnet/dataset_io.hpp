#pragma once

// On-disk corpora. A directory holds manifest.txt plus SSNT containers:
//   blobs:     one line "<id> <image file> <mask file>" per sample
//   two-moons: the single line "moons <file>" naming an [n,3] float container (x, y, label)

#include <filesystem>
#include <string>
#include <vector>

#include "ssnet/synthdata.hpp"

namespace ssnet {

struct SegCorpus {
    std::vector<SegSample> samples;
    std::vector<std::string> ids;
};

void write_seg_corpus(const std::filesystem::path& dir, const SegCorpus& corpus);
SegCorpus read_seg_corpus(const std::filesystem::path& dir);

void write_moon_corpus(const std::filesystem::path& dir, const MoonSet& set);
MoonSet read_moon_corpus(const std::filesystem::path& dir);

/// True when the manifest names a two-moon container.
bool is_moon_corpus(const std::filesystem::path& dir);

} // namespace ssnet
