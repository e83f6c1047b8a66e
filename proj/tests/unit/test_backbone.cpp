#include <doctest.h>

#include "saanet/backbone.hpp"

using namespace saanet;

namespace {

Tensor random_tensor(Shape shape, Rng& rng) {
    Tensor t(std::move(shape));
    for (auto& v : t.data()) v = static_cast<Real>(rng.uniform());
    return t;
}

std::size_t count_kind(const DeformerConfig& c, std::size_t stage, BlockKind kind) {
    std::size_t n = 0;
    for (auto k : c.block_kinds(stage)) n += k == kind;
    return n;
}

}  // namespace

TEST_CASE("patch embedding shapes") {
    Rng rng(1);
    PatchEmbed first(3, 96, 7, 4, rng);
    const StageOutput s1 = first.forward(Tensor({3, 224, 224}), 1);
    CHECK(s1.map.shape() == Shape{96, 56, 56});
    CHECK(s1.stage == 1);

    PatchEmbed second(96, 192, 3, 2, rng);
    CHECK(patch_embed(s1.map, second).map.shape() == Shape{192, 28, 28});

    PatchEmbed toy(3, 8, 7, 4, rng);
    CHECK(toy.forward(Tensor({3, 32, 32}), 1).map.shape() == Shape{8, 8, 8});
    CHECK_THROWS_AS(toy.forward(Tensor({3, 32}), 1), DimensionError);
}

TEST_CASE("configs follow the block layout") {
    const auto tiny = DeformerConfig::tiny();
    CHECK(tiny.stages[0].channels == 96);
    CHECK(tiny.stages[1].channels == 192);
    CHECK(tiny.stages[2].channels == 384);
    CHECK(tiny.stages[3].channels == 768);
    CHECK(tiny.block_kinds(0).size() == 2);
    CHECK(tiny.block_kinds(1).size() == 2);
    CHECK(count_kind(tiny, 0, BlockKind::Global) == 0);
    CHECK(count_kind(tiny, 1, BlockKind::Global) == 0);
    CHECK(count_kind(tiny, 2, BlockKind::Global) == 3);
    CHECK(count_kind(tiny, 2, BlockKind::Deformable) == 3);
    CHECK(count_kind(tiny, 3, BlockKind::Global) == 1);
    for (const auto* name : {"small", "base"}) {
        const auto c = DeformerConfig::named(name);
        CHECK(count_kind(c, 2, BlockKind::Global) == 9);
        CHECK(count_kind(c, 2, BlockKind::Deformable) == 9);
    }
    // alternation inside a stage: DA then GSA
    const auto kinds = tiny.block_kinds(2);
    CHECK(kinds[0] == BlockKind::Deformable);
    CHECK(kinds[1] == BlockKind::Global);
    CHECK_THROWS_AS(DeformerConfig::named("huge"), ConfigError);

    auto bad = tiny;
    bad.stages[1].stride = 4;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = tiny;
    bad.stages[0].paired_blocks = 1;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("encoder block with zeroed branches is the identity") {
    Rng rng(2);
    for (auto kind : {BlockKind::Deformable, BlockKind::Global}) {
        EncoderBlock block(kind, 8, 2, 4, 4, rng);
        block.zero_branches();
        const StageOutput x{random_tensor({8, 5, 6}, rng), 2};
        const StageOutput y = encoder_block(x, block);
        REQUIRE(y.map.shape() == x.map.shape());
        for (std::size_t i = 0; i < x.map.numel(); ++i) CHECK(y.map[i] == x.map[i]);
    }
}

TEST_CASE("encoder block preserves shape") {
    Rng rng(3);
    EncoderBlock block(BlockKind::Deformable, 192, 4, 4, 4, rng);
    const StageOutput y = block.forward(StageOutput{Tensor({192, 28, 28}), 2});
    CHECK(y.map.shape() == Shape{192, 28, 28});
}

TEST_CASE("deformable block on a constant field stays constant") {
    Rng rng(4);
    EncoderBlock block(BlockKind::Deformable, 8, 2, 1, 4, rng);
    block.pos.zero();  // zero padding of the conv would otherwise mark the border
    ParamList p;
    block.deformable.collect("d", p);
    for (auto [name, t] : p)
        if (name.find("offsets") != std::string::npos)
            for (auto& v : t.data()) v = static_cast<Real>(rng.uniform(-0.05, 0.05));
    Tensor x({8, 6, 6});
    for (std::size_t c = 0; c < 8; ++c)
        for (std::size_t i = 0; i < 36; ++i) x[c * 36 + i] = static_cast<Real>(0.1 * static_cast<double>(c) - 0.3);
    // offsets stay small and every sample lands in the interior for the centre tokens
    const StageOutput y = block.forward(StageOutput{x, 1});
    for (std::size_t c = 0; c < 8; ++c)
        for (std::size_t i = 2; i < 4; ++i)
            for (std::size_t j = 2; j < 4; ++j) CHECK(y.map.at({c, i, j}) == doctest::Approx(y.map.at({c, 2, 2})).epsilon(1e-5));
}

TEST_CASE("backbone resolutions") {
    Rng rng(5);
    const Deformer net(DeformerConfig::tiny(8), rng);
    const auto f = forward_backbone(Tensor({3, 64, 64}), net);
    CHECK(f.f2().map.shape() == Shape{24, 8, 8});
    CHECK(f.f3().map.shape() == Shape{48, 4, 4});
    CHECK(f.f4().map.shape() == Shape{96, 2, 2});
    CHECK(f.stages[0].map.shape() == Shape{12, 16, 16});

    for (std::size_t h : {32u, 96u}) {
        for (std::size_t w : {32u, 64u, 160u}) {
            const auto g = net.forward(Tensor({3, h, w}));
            for (std::size_t i = 0; i < 4; ++i) {
                const std::size_t div = std::size_t{1} << (i + 2);
                CHECK(g.stages[i].height() == h / div);
                CHECK(g.stages[i].width() == w / div);
            }
        }
    }
    try {
        net.forward(Tensor({3, 40, 64}));
        FAIL("expected a configuration error");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("pad") != std::string::npos);
    }
}
