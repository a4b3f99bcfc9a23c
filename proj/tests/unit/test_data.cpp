#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "mlsal/dataset_io.hpp"
#include "oracles.hpp"

using namespace mlsal;
namespace fs = std::filesystem;

namespace {

struct ScratchDir {
    explicit ScratchDir(const std::string& name) : path(fs::temp_directory_path() / ("mlsal_data_" + name)) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~ScratchDir() { fs::remove_all(path); }
    fs::path path;
};

std::map<std::string, std::string> read_tree(const fs::path& root) {
    std::map<std::string, std::string> out;
    for (const auto& e : fs::recursive_directory_iterator(root)) {
        if (!e.is_regular_file()) continue;
        std::ifstream in(e.path(), std::ios::binary);
        std::ostringstream ss;
        ss << in.rdbuf();
        out[fs::relative(e.path(), root).string()] = ss.str();
    }
    return out;
}

}  // namespace

TEST(Synthetic, SameSpecGivesIdenticalFiles) {
    ScratchDir a("det_a"), b("det_b");
    SyntheticSpec spec;
    spec.count = 6;
    write_synthetic(generate_synthetic(spec), a.path);
    write_synthetic(generate_synthetic(spec), b.path);
    const auto ta = read_tree(a.path), tb = read_tree(b.path);
    EXPECT_EQ(ta.size(), 24u);
    EXPECT_TRUE(ta == tb);
    spec.seed += 1;
    ScratchDir c("det_c");
    write_synthetic(generate_synthetic(spec), c.path);
    EXPECT_FALSE(read_tree(c.path) == ta);
}

TEST(Synthetic, MasksRespectAreaAndShapeBounds) {
    SyntheticSpec spec;
    spec.count = 30;
    spec.shapes = {ShapeKind::rectangle};
    const auto ds = generate_synthetic(spec);
    ASSERT_EQ(ds.saliency.size(), 30u);
    ASSERT_EQ(ds.edge.size(), 30u);
    for (const auto& r : ds.saliency) {
        EXPECT_TRUE(is_binary(r.target));
        EXPECT_GE(r.target.mean(), 0.05);
        EXPECT_LE(r.target.mean(), 0.60);
        // A rectangle's foreground is exactly its bounding box.
        int y0 = 64, y1 = -1, x0 = 64, x1 = -1;
        for (int y = 0; y < 64; ++y)
            for (int x = 0; x < 64; ++x)
                if (r.target(0, y, x) > 0.5) y0 = std::min(y0, y), y1 = std::max(y1, y), x0 = std::min(x0, x), x1 = std::max(x1, x);
        EXPECT_DOUBLE_EQ(r.target.mean() * 64 * 64, double((y1 - y0 + 1) * (x1 - x0 + 1))) << r.id;
    }
    for (const auto& r : ds.edge) {
        EXPECT_EQ(r.kind, SampleKind::edge);
        EXPECT_GT(r.target.max(), 0.5);
    }
}

TEST(Synthetic, ForegroundContrastsWithBackground) {
    SyntheticSpec spec;
    spec.count = 10;
    spec.noise = 0;
    const auto ds = generate_synthetic(spec);
    for (const auto& r : ds.saliency) {
        double fg = 0, bg = 0, nf = 0, nb = 0;
        for (int y = 0; y < 64; ++y)
            for (int x = 0; x < 64; ++x) {
                const double lum = (r.image(0, y, x) + r.image(1, y, x) + r.image(2, y, x)) / 3;
                if (r.target(0, y, x) > 0.5) fg += lum, ++nf;
                else bg += lum, ++nb;
            }
        EXPECT_GE(fg / nf - bg / nb, 0.2 - 1e-9) << r.id;
    }
}

TEST(Synthetic, SpecValidation) {
    SyntheticSpec s;
    s.count = 0;
    EXPECT_THROW(s.validate(), ConfigError);
    s = {};
    s.fg_range = {0.4, 0.5};
    EXPECT_THROW(s.validate(), ConfigError);
    s = {};
    s.shapes.clear();
    EXPECT_THROW(s.validate(), ConfigError);
    s = {};
    s.canvas_size = 8;
    EXPECT_THROW(s.validate(), ConfigError);
    EXPECT_THROW(shape_from_string("hexagon"), ConfigError);
}

TEST(LoadDataset, EmptyRootGivesEmptyCollection) {
    ScratchDir d("empty");
    EXPECT_TRUE(load_dataset(d.path, SampleKind::saliency, 64).empty());
    EXPECT_THROW(load_dataset(d.path / "missing", SampleKind::saliency, 64), IngestionError);
}

TEST(LoadDataset, PairsSortedByIdAndMasksBinary) {
    ScratchDir d("pairs");
    SyntheticSpec spec;
    spec.count = 5;
    spec.canvas_size = 48;
    auto ds = generate_synthetic(spec);
    std::reverse(ds.saliency.begin(), ds.saliency.end());
    write_dataset(ds.saliency, d.path);
    const auto got = load_dataset(d.path, SampleKind::saliency, 32);
    ASSERT_EQ(got.size(), 5u);
    for (std::size_t i = 0; i < got.size(); ++i) {
        if (i) EXPECT_LT(got[i - 1].id, got[i].id);
        EXPECT_EQ(got[i].image.channels(), 3);
        EXPECT_EQ(got[i].image.height(), 32);
        EXPECT_EQ(got[i].target.height(), 32);
        EXPECT_TRUE(is_binary(got[i].target));
        EXPECT_EQ(got[i].kind, SampleKind::saliency);
    }
}

TEST(LoadDataset, OrphanNamesTheId) {
    ScratchDir d("orphan");
    SyntheticSpec spec;
    spec.count = 3;
    write_dataset(generate_synthetic(spec).saliency, d.path);
    fs::remove(d.path / "targets" / (synthetic_id(1) + ".png"));
    try {
        load_dataset(d.path, SampleKind::saliency, 64);
        FAIL() << "expected IngestionError";
    } catch (const IngestionError& e) {
        EXPECT_NE(std::string(e.what()).find(synthetic_id(1)), std::string::npos) << e.what();
    }
}

TEST(LoadDataset, AnnotatorDirectoryIsAveraged) {
    ScratchDir d("annot");
    fs::create_directories(d.path / "images");
    fs::create_directories(d.path / "targets" / "a");
    io::write_image(d.path / "images" / "a.png", Tensor(3, 16, 16, 0.5));
    Tensor one(1, 16, 16), two(1, 16, 16);
    for (int x = 0; x < 16; ++x) one(0, 4, x) = 1.0, two(0, 4, x) = 1.0, two(0, 9, x) = 1.0;
    io::write_map(d.path / "targets" / "a" / "r1.png", one);
    io::write_map(d.path / "targets" / "a" / "r2.png", two);
    const auto got = load_dataset(d.path, SampleKind::edge, 16);
    ASSERT_EQ(got.size(), 1u);
    EXPECT_DOUBLE_EQ(got[0].target(0, 4, 3), 1.0);
    EXPECT_DOUBLE_EQ(got[0].target(0, 9, 3), 0.5);
    EXPECT_DOUBLE_EQ(got[0].target(0, 0, 3), 0.0);
}

TEST(Batcher, ShorterSideRecycledWithinEpoch) {
    PairedBatcher b(4, 2, 11);
    EXPECT_EQ(b.epoch_length(), 4u);
    std::map<std::size_t, int> sal, edge;
    for (int i = 0; i < 4; ++i) {
        const auto [s, e] = b.next();
        ++sal[s];
        ++edge[e];
    }
    EXPECT_EQ(sal.size(), 4u);
    ASSERT_EQ(edge.size(), 2u);
    for (const auto& [_, n] : edge) EXPECT_EQ(n, 2);
}

TEST(Batcher, SeedDeterminismAndErrors) {
    EXPECT_EQ(paired_batches(7, 3, 5, 40), paired_batches(7, 3, 5, 40));
    EXPECT_NE(paired_batches(7, 3, 5, 40), paired_batches(7, 3, 6, 40));
    EXPECT_THROW(PairedBatcher(0, 3, 1), ConfigError);
    EXPECT_THROW(PairedBatcher(3, 0, 1), ConfigError);
}

TEST(Batcher, SerializeRestoreContinuesStream) {
    PairedBatcher a(5, 3, 9);
    for (int i = 0; i < 7; ++i) a.next();
    PairedBatcher b(5, 3, 1234);
    b.restore(a.serialize());
    for (int i = 0; i < 20; ++i) EXPECT_EQ(a.next(), b.next());
    EXPECT_THROW(b.restore("garbage"), LoadError);
}

TEST(ImageIo, MapRoundTripAndErrors) {
    ScratchDir d("io");
    std::mt19937_64 rng(1);
    Tensor m = oracle::random_map(9, 11, rng);
    io::write_map(d.path / "m.png", m);
    const Tensor back = io::read_map(d.path / "m.png");
    ASSERT_TRUE(back.same_shape(m));
    for (std::size_t k = 0; k < m.size(); ++k) EXPECT_NEAR(back[k], m[k], 0.5 / 255 + 1e-12);
    EXPECT_THROW(io::read_map(d.path / "none.png"), IngestionError);
    std::ofstream(d.path / "junk.png") << "not an image";
    EXPECT_THROW(io::read_image(d.path / "junk.png"), IngestionError);
}
