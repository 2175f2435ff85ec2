#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "aef/checkpoint.hpp"
#include "aef/config.hpp"
#include "aef/unet.hpp"

using namespace aef;

TEST_CASE("config: presets, typed access, merge, hash") {
    auto desk = Config::preset("desk");
    CHECK(desk.integer("diffusion.T") == 1000);
    CHECK(desk.real("train.lr") == doctest::Approx(4.8e-5));
    CHECK(desk.integer("unet.base_channels") == 64);
    CHECK(desk.str("unet.channel_multipliers") == "1,2,4");

    auto paper = Config::preset("paper");
    CHECK(paper.integer("unet.base_channels") == 256);
    CHECK(paper.integer("unet.latent_size") == 64);
    CHECK(paper.integer("diffusion.infer_steps") == 200);
    CHECK(paper.integer("train.batch") == 48);
    CHECK(paper.integer("train.steps") == 600000);
    CHECK(paper.integer("codec.latent_channels") == 3);

    CHECK_THROWS_AS(Config::preset("galaxy"), ConfigError);
    CHECK_THROWS_AS(desk.str("nope.key"), ConfigError);
    CHECK_THROWS_AS(desk.integer("unet.channel_multipliers"), ConfigError);

    Config over;
    over.set("train.steps", int64_t(250));
    desk.merge(over);
    CHECK(desk.integer("train.steps") == 250);

    const auto h1 = desk.hash();
    desk.set("seed", int64_t(1));
    CHECK(desk.hash() != h1);
}

TEST_CASE("config: file parsing with comments and errors") {
    const std::string p = "/tmp/aef_cfg_test.cfg";
    {
        std::ofstream f(p, std::ios::trunc);
        f << "# comment line\n"
          << "train.steps = 123\n"
          << "data.size=32   # trailing comment\n"
          << "\n";
    }
    Config c;
    c.load_file(p);
    CHECK(c.integer("train.steps") == 123);
    CHECK(c.integer("data.size") == 32);

    {
        std::ofstream f(p, std::ios::trunc);
        f << "not a key value line\n";
    }
    Config bad;
    CHECK_THROWS_AS(bad.load_file(p), ConfigError);

    // dump/reload round trip preserves the hash
    auto desk = Config::preset("desk");
    desk.save("/tmp/aef_cfg_dump.cfg");
    Config back;
    back.load_file("/tmp/aef_cfg_dump.cfg");
    CHECK(back.hash() == desk.hash());
}

TEST_CASE("checkpoint: roundtrip, version field, mismatch failures") {
    Rng rng(3);
    ParamSet<float> params;
    auto a = params.add("layer.w", Tensor<float>::randn({3, 4}, rng));
    auto b = params.add("layer.b", Tensor<float>::randn({4}, rng));
    const std::string p = "/tmp/aef_ckpt_test.aef";
    save_checkpoint(p, params, {{"geometry", "abc123"}, {"note", "test"}});

    // the version string is embedded in the manifest bytes
    std::ifstream f(p, std::ios::binary);
    std::string head(256, '\0');
    f.read(head.data(), 256);
    CHECK(head.find(kCheckpointVersion) != std::string::npos);

    ParamSet<float> loaded;
    auto la = loaded.add("layer.w", Tensor<float>::zeros({3, 4}));
    auto lb = loaded.add("layer.b", Tensor<float>::zeros({4}));
    auto meta = load_checkpoint(p, loaded);
    CHECK(la.data() == a.data());
    CHECK(lb.data() == b.data());
    CHECK(meta.at("geometry") == "abc123");

    // shape mismatch fails fast and names the tensor
    ParamSet<float> wrong;
    wrong.add("layer.w", Tensor<float>::zeros({4, 4}));
    CHECK_THROWS_WITH_AS(load_checkpoint(p, wrong), doctest::Contains("layer.w"), std::runtime_error);

    // missing tensor fails
    ParamSet<float> extra;
    extra.add("other.w", Tensor<float>::zeros({2}));
    CHECK_THROWS_AS(load_checkpoint(p, extra), std::runtime_error);

    // dtype mismatch fails
    ParamSet<double> dbl;
    dbl.add("layer.w", Tensor<double>::zeros({3, 4}));
    CHECK_THROWS_AS(load_checkpoint(p, dbl), std::runtime_error);
}

TEST_CASE("checkpoint roundtrip restores a full model bitwise") {
    UNetConfig cfg;
    cfg.latent_channels = 2;
    cfg.context_frames = 1;
    cfg.base_channels = 8;
    cfg.channel_multipliers = {1, 2};
    cfg.attention_enabled = {0, 1};
    cfg.heads = 2;
    cfg.groupnorm_groups = 4;
    cfg.latent_size = 8;
    cfg.res_blocks = 1;
    VidmUnet<float> src(cfg, 9);
    const std::string p = "/tmp/aef_ckpt_model.aef";
    save_checkpoint(p, src.params(), {{"geometry", cfg.geometry_hash()}});

    VidmUnet<float> dst(cfg, 777);  // different init, same geometry
    auto meta = load_checkpoint(p, dst.params());
    CHECK(meta.at("geometry") == cfg.geometry_hash());
    for (size_t i = 0; i < src.params().items.size(); ++i)
        CHECK(src.params().items[i].second.data() == dst.params().items[i].second.data());

    // geometry hash differs when the architecture changes
    UNetConfig other = cfg;
    other.base_channels = 16;
    CHECK(other.geometry_hash() != cfg.geometry_hash());
}
