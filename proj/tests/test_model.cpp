#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <sstream>

#include "orthoscore/checkpoint.hpp"
#include "orthoscore/model.hpp"
#include "orthoscore/trainer.hpp"
#include "support/gradcheck.hpp"

using namespace orthoscore;

namespace {

ModelConfig tiny_config() {
    ModelConfig c;
    c.block_size = 6;
    c.n_layer = 2;
    c.n_head = 2;
    c.n_embd = 8;
    c.vocab_size = 11;
    c.dropout_rate = 0.0;
    c.seed = 5;
    return c;
}

std::vector<float> all_params_flat(const Model& m) {
    std::vector<float> out;
    for (const auto& p : m.params()) {
        auto d = p.data();
        out.insert(out.end(), d.begin(), d.end());
    }
    return out;
}

void set_data(Tensor t, const std::vector<float>& values) {
    REQUIRE(t.numel() == static_cast<int64_t>(values.size()));
    std::copy(values.begin(), values.end(), t.data().begin());
}

} // namespace

TEST_CASE("init is deterministic for a fixed config and seed") {
    auto a = Model(tiny_config());
    auto b = Model(tiny_config());
    CHECK(all_params_flat(a) == all_params_flat(b));

    auto cfg = tiny_config();
    cfg.seed = 6;
    auto c = Model(cfg);
    CHECK(all_params_flat(a) != all_params_flat(c));
}

TEST_CASE("invalid configs are rejected") {
    auto cfg = tiny_config();
    cfg.n_embd = 9; // not divisible by n_head = 2
    CHECK_THROWS_AS(Model{cfg}, Error);
    cfg = tiny_config();
    cfg.vocab_size = 0;
    CHECK_THROWS_AS(count_params(cfg), Error);
}

TEST_CASE("count_params closed form") {
    SUBCASE("worked example d=8, L=1, block=4, vocab=10") {
        ModelConfig c;
        c.block_size = 4;
        c.n_layer = 1;
        c.n_head = 1;
        c.n_embd = 8;
        c.vocab_size = 10;
        CHECK(count_params(c) == 1080);
        CHECK(Model(c).param_count() == 1080);
    }
    SUBCASE("no layers degenerates to embeddings, final norm and head") {
        ModelConfig c;
        c.block_size = 4;
        c.n_layer = 0;
        c.n_head = 1;
        c.n_embd = 8;
        c.vocab_size = 10;
        CHECK(count_params(c) == 10 * 8 + 4 * 8 + 2 * 8 + 8 * 10);
        CHECK(Model(c).param_count() == count_params(c));
    }
    SUBCASE("paper preset head dimension and non-embedding, non-head total") {
        auto c = ModelConfig::paper_preset();
        CHECK(c.head_dim() == 84);
        const int64_t d = c.n_embd;
        const int64_t interior = c.block_size * d + c.n_layer * (12 * d * d + 13 * d) + 2 * d;
        CHECK(interior == 5458320);
        c.vocab_size = 100;
        CHECK(count_params(c) == interior + 2 * 100 * d);
    }
    SUBCASE("matches enumeration on randomized small configs") {
        Rng rng(99);
        for (int trial = 0; trial < 50; ++trial) {
            ModelConfig c;
            c.n_head = 1 + static_cast<int64_t>(rng.uniform_int(3));
            c.n_embd = c.n_head * (1 + static_cast<int64_t>(rng.uniform_int(6)));
            c.n_layer = static_cast<int64_t>(rng.uniform_int(4));
            c.block_size = 1 + static_cast<int64_t>(rng.uniform_int(16));
            c.vocab_size = 2 + static_cast<int64_t>(rng.uniform_int(40));
            c.dropout_rate = 0.0;
            CHECK(Model(c).param_count() == count_params(c));
        }
    }
}

TEST_CASE("forward shape and input validation") {
    Model model(tiny_config());
    std::vector<int32_t> tokens{1, 2, 3};
    auto logits = model.forward(nullptr, tokens, false);
    CHECK(logits.shape() == Shape{3, 11});

    std::vector<int32_t> too_long(7, 1);
    CHECK_THROWS_AS(model.forward(nullptr, too_long, false), Error);
    std::vector<int32_t> bad_id{1, 11};
    CHECK_THROWS_AS(model.forward(nullptr, bad_id, false), Error);
    CHECK_THROWS_AS(model.forward(nullptr, std::vector<int32_t>{}, false), Error);
}

TEST_CASE("causality: perturbing the last token leaves earlier logits unchanged") {
    Model model(tiny_config());
    Rng rng(3);
    for (int trial = 0; trial < 50; ++trial) {
        const int64_t t = 2 + static_cast<int64_t>(rng.uniform_int(5));
        std::vector<int32_t> tokens(static_cast<size_t>(t));
        for (auto& id : tokens) {
            id = static_cast<int32_t>(rng.uniform_int(11));
        }
        auto base = model.forward(nullptr, tokens, false);
        auto changed = tokens;
        changed.back() = static_cast<int32_t>((changed.back() + 1 +
                                               static_cast<int32_t>(rng.uniform_int(10))) % 11);
        auto perturbed = model.forward(nullptr, changed, false);
        auto bd = base.data();
        auto pd = perturbed.data();
        for (int64_t i = 0; i < (t - 1) * 11; ++i) {
            CHECK(bd[static_cast<size_t>(i)] == pd[static_cast<size_t>(i)]);
        }
    }
}

TEST_CASE("eval forwards are identical (no dropout in eval mode)") {
    auto cfg = tiny_config();
    cfg.dropout_rate = 0.5;
    Model model(cfg);
    std::vector<int32_t> tokens{4, 2, 9, 0};
    auto a = model.forward(nullptr, tokens, false);
    auto b = model.forward(nullptr, tokens, false);
    auto ad = a.data();
    auto bd = b.data();
    for (size_t i = 0; i < ad.size(); ++i) {
        CHECK(ad[i] == bd[i]);
    }

    // Train mode with dropout does perturb activations.
    Rng r1(1), r2(2);
    auto t1 = model.forward(nullptr, tokens, true, &r1);
    auto t2 = model.forward(nullptr, tokens, true, &r2);
    bool any_diff = false;
    for (size_t i = 0; i < ad.size(); ++i) {
        any_diff = any_diff || t1.data()[i] != t2.data()[i];
    }
    CHECK(any_diff);
}

TEST_CASE("one-layer forward matches a hand computation on a length-2 input") {
    ModelConfig cfg;
    cfg.block_size = 2;
    cfg.n_layer = 1;
    cfg.n_head = 1;
    cfg.n_embd = 2;
    cfg.vocab_size = 3;
    cfg.dropout_rate = 0.0;
    Model model(cfg);

    // Small, fully specified weights.
    const std::vector<float> wte{0.10f, -0.20f, 0.30f, 0.05f, -0.15f, 0.25f};
    const std::vector<float> wpe{0.02f, 0.03f, -0.04f, 0.06f};
    const std::vector<float> qkv_w{0.10f, 0.20f, -0.10f, 0.05f, 0.15f, -0.05f,
                                   -0.20f, 0.10f, 0.30f, 0.00f, 0.05f, 0.10f};
    const std::vector<float> qkv_b{0.01f, -0.01f, 0.02f, 0.00f, -0.02f, 0.03f};
    const std::vector<float> proj_w{0.20f, -0.10f, 0.05f, 0.15f};
    const std::vector<float> proj_b{0.00f, 0.01f};
    const std::vector<float> fc_w{0.10f, -0.20f, 0.30f, 0.05f, 0.15f, 0.25f, -0.10f, 0.20f,
                                  -0.05f, 0.10f, 0.00f, 0.30f, 0.20f, -0.15f, 0.10f, 0.05f};
    const std::vector<float> fc_b{0.01f, 0.02f, -0.01f, 0.00f, 0.03f, -0.02f, 0.01f, 0.00f};
    const std::vector<float> out_w{0.10f, -0.05f, 0.20f, 0.15f, -0.10f, 0.25f, 0.05f, 0.10f,
                                   0.30f, -0.20f, 0.15f, 0.00f, -0.05f, 0.10f, 0.20f, 0.05f};
    const std::vector<float> out_b{0.00f, -0.01f};
    const std::vector<float> head_w{0.20f, -0.10f, 0.05f, 0.15f, 0.25f, -0.20f};

    std::map<std::string, std::vector<float>> weights{
        {"tok_embedding", wte},       {"pos_embedding", wpe},
        {"block0.qkv_weight", qkv_w}, {"block0.qkv_bias", qkv_b},
        {"block0.proj_weight", proj_w}, {"block0.proj_bias", proj_b},
        {"block0.fc_weight", fc_w},   {"block0.fc_bias", fc_b},
        {"block0.out_weight", out_w}, {"block0.out_bias", out_b},
        {"head_weight", head_w}};
    for (auto& [name, tensor] : model.named_params()) {
        if (auto it = weights.find(name); it != weights.end()) {
            set_data(tensor, it->second);
        }
        // layer-norm parameters keep their init (gamma 1, beta 0)
    }

    const std::vector<int32_t> tokens{2, 0};
    auto logits = model.forward(nullptr, tokens, false);

    // Independent step-by-step recomputation in double.
    const double eps = Model::kLayerNormEps;
    auto ln = [&](double a, double b) {
        const double mean = (a + b) / 2.0;
        const double var = ((a - mean) * (a - mean) + (b - mean) * (b - mean)) / 2.0;
        const double istd = 1.0 / std::sqrt(var + eps);
        return std::array<double, 2>{(a - mean) * istd, (b - mean) * istd};
    };
    auto gelu_ref = [](double v) {
        const double u = 0.7978845608028654 * (v + 0.044715 * v * v * v);
        return 0.5 * v * (1.0 + std::tanh(u));
    };

    std::array<std::array<double, 2>, 2> x;
    for (int i = 0; i < 2; ++i) {
        for (int j = 0; j < 2; ++j) {
            x[i][j] = wte[tokens[i] * 2 + j] + wpe[i * 2 + j];
        }
    }
    // attention
    std::array<std::array<double, 6>, 2> qkv{};
    for (int i = 0; i < 2; ++i) {
        auto h = ln(x[i][0], x[i][1]);
        for (int j = 0; j < 6; ++j) {
            qkv[i][j] = h[0] * qkv_w[j] + h[1] * qkv_w[6 + j] + qkv_b[j];
        }
    }
    auto dot_qk = [&](int i, int j) {
        return (qkv[i][0] * qkv[j][2] + qkv[i][1] * qkv[j][3]) / std::sqrt(2.0);
    };
    std::array<std::array<double, 2>, 2> head{};
    head[0] = {qkv[0][4], qkv[0][5]}; // row 0 attends only to itself
    const double l10 = dot_qk(1, 0), l11 = dot_qk(1, 1);
    const double mx = std::max(l10, l11);
    const double w10 = std::exp(l10 - mx), w11 = std::exp(l11 - mx);
    const double denom = w10 + w11;
    head[1] = {(w10 * qkv[0][4] + w11 * qkv[1][4]) / denom,
               (w10 * qkv[0][5] + w11 * qkv[1][5]) / denom};
    for (int i = 0; i < 2; ++i) {
        const double a0 = head[i][0] * proj_w[0] + head[i][1] * proj_w[2] + proj_b[0];
        const double a1 = head[i][0] * proj_w[1] + head[i][1] * proj_w[3] + proj_b[1];
        x[i][0] += a0;
        x[i][1] += a1;
    }
    // mlp
    for (int i = 0; i < 2; ++i) {
        auto h = ln(x[i][0], x[i][1]);
        std::array<double, 8> mid{};
        for (int j = 0; j < 8; ++j) {
            mid[j] = gelu_ref(h[0] * fc_w[j] + h[1] * fc_w[8 + j] + fc_b[j]);
        }
        for (int j = 0; j < 2; ++j) {
            double v = out_b[j];
            for (int k = 0; k < 8; ++k) {
                v += mid[k] * out_w[k * 2 + j];
            }
            x[i][j] += v;
        }
    }
    // final norm + head
    for (int i = 0; i < 2; ++i) {
        auto h = ln(x[i][0], x[i][1]);
        for (int j = 0; j < 3; ++j) {
            const double expected = h[0] * head_w[j] + h[1] * head_w[3 + j];
            CHECK(logits.data()[i * 3 + j] == doctest::Approx(expected).epsilon(5e-5));
        }
    }
}

TEST_CASE("full tiny transformer passes finite-difference checks") {
    SUBCASE("float32 analytic vs double oracle") {
        const double err = testsupport::transformer_gradcheck_error<float>(tiny_config(), 17, 5);
        CHECK(err <= 1e-3);
    }
    SUBCASE("float64 analytic vs double oracle") {
        const double err = testsupport::transformer_gradcheck_error<double>(tiny_config(), 18, 5);
        CHECK(err <= 1e-6);
    }
}

TEST_CASE("checkpoint round-trip is bitwise exact") {
    auto cfg = tiny_config();
    Model model(cfg);
    Vocab vocab = Vocab::from_chars({U'a', U'b', U',', U'w', U'r', U'i', U't', U'e', U'd'});

    std::ostringstream out;
    save_checkpoint(out, model, vocab);
    const std::string blob = out.str();

    std::istringstream in(blob);
    auto restored = load_checkpoint(in);
    CHECK(restored.config.n_embd == cfg.n_embd);
    CHECK(restored.config.vocab_size == cfg.vocab_size);
    CHECK(restored.vocab == vocab);
    CHECK(all_params_flat(restored.model) == all_params_flat(model));
}

TEST_CASE("checkpoint load failures are distinct") {
    Model model(tiny_config());
    Vocab vocab = Vocab::from_chars({U'a', U'b'});
    std::ostringstream out;
    save_checkpoint(out, model, vocab);
    const std::string blob = out.str();

    SUBCASE("corrupted magic") {
        std::string bad = blob;
        bad[0] = 'X';
        std::istringstream in(bad);
        try {
            load_checkpoint(in);
            FAIL("expected bad magic");
        } catch (const Error& e) {
            CHECK(e.kind() == ErrorKind::BadMagic);
        }
    }
    SUBCASE("unsupported version") {
        std::string bad = blob;
        bad[8] = 9;
        std::istringstream in(bad);
        try {
            load_checkpoint(in);
            FAIL("expected version error");
        } catch (const Error& e) {
            CHECK(e.kind() == ErrorKind::BadVersion);
        }
    }
    SUBCASE("truncation") {
        std::string bad = blob.substr(0, blob.size() - 17);
        std::istringstream in(bad);
        try {
            load_checkpoint(in);
            FAIL("expected truncation error");
        } catch (const Error& e) {
            CHECK(e.kind() == ErrorKind::Truncated);
        }
    }
}

TEST_CASE("checkpoint preserves behavior across a training step") {
    std::vector<Sample> samples{{"xx", "write", U"ab", U"ba"},
                                {"xx", "read", U"ba", U"ab"},
                                {"xx", "write", U"aa", U"aa"},
                                {"xx", "read", U"bb", U"bb"}};
    Vocab vocab = Vocab::build(samples);
    auto cfg = tiny_config();
    cfg.block_size = 16;
    cfg.vocab_size = vocab.size();
    Model model(cfg);

    auto prompt = make_prompt("xx", "write", U"ab", vocab);
    auto before = model.forward(nullptr, prompt, false);

    std::ostringstream out;
    save_checkpoint(out, model, vocab);

    TrainConfig tc;
    tc.batch_size = 4;
    tc.max_steps = 1;
    tc.warmup_steps = 0;
    tc.seed = 1;
    train<float>(model, samples, vocab, tc);

    auto after_train = model.forward(nullptr, prompt, false);
    bool changed = false;
    for (size_t i = 0; i < before.data().size(); ++i) {
        changed = changed || before.data()[i] != after_train.data()[i];
    }
    CHECK(changed);

    std::istringstream in(out.str());
    auto restored = load_checkpoint(in);
    auto replay = restored.model.forward(nullptr, prompt, false);
    for (size_t i = 0; i < before.data().size(); ++i) {
        CHECK(replay.data()[i] == before.data()[i]);
    }
}
