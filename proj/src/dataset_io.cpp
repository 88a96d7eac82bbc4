#include "ssnet/dataset_io.hpp"

#include <fstream>
#include <sstream>

#include "ssnet/error.hpp"
#include "ssnet/tensor_io.hpp"

namespace ssnet {

namespace {

std::ofstream open_manifest(const std::filesystem::path& dir)
{
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw Error(ErrorCode::io_failure, "cannot create " + dir.string() + ": " + ec.message());
    std::ofstream out(dir / "manifest.txt");
    if (!out) throw Error(ErrorCode::io_failure, "cannot write " + (dir / "manifest.txt").string());
    return out;
}

std::vector<std::vector<std::string>> read_manifest(const std::filesystem::path& dir)
{
    std::ifstream in(dir / "manifest.txt");
    if (!in) throw Error(ErrorCode::io_failure, "cannot open " + (dir / "manifest.txt").string());
    std::vector<std::vector<std::string>> lines;
    std::string line;
    while (std::getline(in, line)) {
        std::istringstream ls(line);
        std::vector<std::string> words;
        for (std::string w; ls >> w;) words.push_back(w);
        if (!words.empty()) lines.push_back(std::move(words));
    }
    return lines;
}

} // namespace

void write_seg_corpus(const std::filesystem::path& dir, const SegCorpus& corpus)
{
    if (corpus.ids.size() != corpus.samples.size()) throw Error(ErrorCode::invalid_argument, "one id per sample required");
    auto manifest = open_manifest(dir);
    for (std::size_t i = 0; i < corpus.samples.size(); ++i) {
        const std::string& id = corpus.ids[i];
        const SegSample& s = corpus.samples[i];
        write_container(dir / (id + "_image.ssnt"), s.image);
        write_container(dir / (id + "_mask.ssnt"), ByteTensor{s.mask.dims, s.mask.labels});
        manifest << id << ' ' << id << "_image.ssnt " << id << "_mask.ssnt\n";
    }
    if (!manifest) throw Error(ErrorCode::io_failure, "write failed in " + dir.string());
}

SegCorpus read_seg_corpus(const std::filesystem::path& dir)
{
    SegCorpus corpus;
    for (const auto& words : read_manifest(dir)) {
        if (words.size() != 3) throw Error(ErrorCode::io_failure, "manifest line for '" + words[0] + "' needs 3 fields");
        SegSample s;
        s.image = read_float_container(dir / words[1]);
        ByteTensor mask = read_byte_container(dir / words[2]);
        if (s.image.rank() != 3 || mask.shape.size() != 2 || s.image.dim(1) != mask.shape[0] ||
            s.image.dim(2) != mask.shape[1])
            throw Error(ErrorCode::shape_mismatch, words[0] + ": image " + shape_string(s.image.shape()) + " vs mask " +
                                                       shape_string(mask.shape));
        s.mask = LabelMask(mask.shape, std::move(mask.data));
        corpus.samples.push_back(std::move(s));
        corpus.ids.push_back(words[0]);
    }
    return corpus;
}

void write_moon_corpus(const std::filesystem::path& dir, const MoonSet& set)
{
    const std::size_t n = set.labels.size();
    Tensor t(Shape{n, 3});
    for (std::size_t i = 0; i < n; ++i) {
        t[3 * i] = set.points[2 * i];
        t[3 * i + 1] = set.points[2 * i + 1];
        t[3 * i + 2] = static_cast<float>(set.labels[i]);
    }
    auto manifest = open_manifest(dir);
    write_container(dir / "moons.ssnt", t);
    manifest << "moons moons.ssnt\n";
    if (!manifest) throw Error(ErrorCode::io_failure, "write failed in " + dir.string());
}

bool is_moon_corpus(const std::filesystem::path& dir)
{
    const auto lines = read_manifest(dir);
    return lines.size() == 1 && lines[0].size() == 2 && lines[0][0] == "moons";
}

MoonSet read_moon_corpus(const std::filesystem::path& dir)
{
    if (!is_moon_corpus(dir)) throw Error(ErrorCode::io_failure, dir.string() + " is not a two-moon corpus");
    const Tensor t = read_float_container(dir / read_manifest(dir)[0][1]);
    if (t.rank() != 2 || t.dim(1) != 3) throw Error(ErrorCode::shape_mismatch, "moon container " + shape_string(t.shape()));
    MoonSet set;
    const std::size_t n = t.dim(0);
    set.points = Tensor(Shape{n, 2});
    set.labels.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        set.points[2 * i] = t[3 * i];
        set.points[2 * i + 1] = t[3 * i + 1];
        const float label = t[3 * i + 2];
        if (label != 0.0f && label != 1.0f) throw Error(ErrorCode::io_failure, "moon label must be 0 or 1");
        set.labels[i] = static_cast<int>(label);
    }
    return set;
}

} // namespace ssnet
