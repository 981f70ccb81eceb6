#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numbers>

#include "gradcheck.hpp"
#include "toy.hpp"
#include "xdr/model.hpp"
#include "xdr/sparse.hpp"
#include "xdr/trainer.hpp"
#include "xdr/vocab.hpp"

using namespace xdr;
using namespace xdr::testing;

namespace {

Vocabulary vocab_from(std::initializer_list<std::string> texts) {
    std::vector<std::vector<std::string>> streams;
    for (const auto& t : texts) streams.push_back(split_words(t));
    return Vocabulary::build(streams, 100);
}

ModelConfig tiny_config() {
    ModelConfig c;
    c.vocab_size = 20;
    c.layers = 2;
    c.d_model = 8;
    c.n_heads = 2;
    c.d_ffn = 12;
    c.max_seq_len = 8;
    c.k_domain_layers = 1;
    return c;
}

DParams random_params(const ModelConfig& c, std::uint64_t seed) {
    Rng rng(seed);
    DParams p;
    for (const auto& [name, shape] : parameter_shapes(c)) {
        DTensor t = random_tensor(shape, rng, 0.5);
        if (name.find("gain") != std::string::npos) {
            for (auto& x : t.data()) x += 1.0;
        }
        p.emplace(name, std::move(t));
    }
    return p;
}

Weights zero_weights(const ModelConfig& c) {
    Weights w;
    for (const auto& [name, shape] : parameter_shapes(c)) w.emplace(name, Tensor<float>(shape, 0.0f));
    return w;
}

}  // namespace

TEST_CASE("vocabulary: frequency order, lexicographic ties, specials first") {
    auto v = vocab_from({"a a b"});
    REQUIRE(v.size() == 7);
    CHECK(v.term(Vocabulary::kPad) == "[PAD]");
    CHECK(v.term(Vocabulary::kUnk) == "[UNK]");
    CHECK(v.term(Vocabulary::kMask) == "[MASK]");
    CHECK(v.term(Vocabulary::kCls) == "[CLS]");
    CHECK(v.term(Vocabulary::kSep) == "[SEP]");
    CHECK(v.term(5) == "a");
    CHECK(v.term(6) == "b");

    auto tie = vocab_from({"b a"});
    CHECK(tie.term(5) == "a");
    CHECK(tie.term(6) == "b");

    auto capped = Vocabulary::build(std::vector<std::vector<std::string>>{{"x", "x", "y", "z"}}, 6);
    CHECK(capped.size() == 6);
    CHECK(capped.term(5) == "x");

    CHECK_THROWS(Vocabulary::build(std::vector<std::vector<std::string>>{}, 10));
    CHECK_THROWS(Vocabulary::build(std::vector<std::vector<std::string>>{{}}, 10));
}

TEST_CASE("vocabulary: disjoint corpora give the union, serialized identically") {
    std::vector<std::vector<std::string>> streams{split_words("alpha beta"), split_words("gamma delta")};
    auto v = Vocabulary::build(streams, 100);
    for (const char* w : {"alpha", "beta", "gamma", "delta"}) CHECK(v.contains(w));
    CHECK(v.size() == 9);

    const auto path = std::filesystem::temp_directory_path() / "xdr_vocab_test.txt";
    v.save(path);
    auto reloaded = Vocabulary::load(path);
    CHECK(reloaded == v);
    CHECK(reloaded.serialize() == v.serialize());
    std::filesystem::remove(path);
}

TEST_CASE("split_words lowercases and splits on punctuation") {
    CHECK(split_words("Hello, World! x-ray") == std::vector<std::string>{"hello", "world", "x", "ray"});
    CHECK(split_words("  ").empty());
    CHECK(split_words("caf\xc3\xa9 ok") == std::vector<std::string>{"caf\xc3\xa9", "ok"});
}

TEST_CASE("tokenize") {
    auto v = vocab_from({"known word"});
    CHECK(tokenize("", v, 8) == std::vector<std::uint32_t>{Vocabulary::kCls, Vocabulary::kSep});
    CHECK(tokenize("known", v, 8) == std::vector<std::uint32_t>{Vocabulary::kCls, v.id("known"), Vocabulary::kSep});
    CHECK(tokenize("martian", v, 8) == std::vector<std::uint32_t>{Vocabulary::kCls, Vocabulary::kUnk, Vocabulary::kSep});
    const auto cut = tokenize("known word known word known", v, 4);
    CHECK(cut == std::vector<std::uint32_t>{Vocabulary::kCls, v.id("known"), v.id("word"), Vocabulary::kSep});
}

TEST_CASE("config validation") {
    auto c = tiny_config();
    CHECK_NOTHROW(c.validate());
    c.n_heads = 3;
    CHECK_THROWS(c.validate());
    c = tiny_config();
    c.k_domain_layers = 2;
    CHECK_THROWS_WITH(c.validate(), doctest::Contains("no task layers remain"));
    c.k_domain_layers = -1;
    CHECK_THROWS(c.validate());
}

TEST_CASE("forward_mlm shape contract and id checks") {
    auto c = tiny_config();
    auto w = init_weights(c, 1);
    std::vector<std::uint32_t> ids{3, 7, 9, 4};
    auto logits = forward_mlm(c, w, ids);
    CHECK(logits.shape() == Shape{4, 20});
    std::vector<std::uint32_t> bad{3, 20, 4};
    CHECK_THROWS(forward_mlm(c, w, bad));
    std::vector<std::uint32_t> too_long(9, 7);
    CHECK_THROWS(forward_mlm(c, w, too_long));
}

TEST_CASE("forward_mlm with only mlm.bias set returns the bias everywhere") {
    auto c = tiny_config();
    auto w = zero_weights(c);
    for (std::size_t j = 0; j < c.vocab_size; ++j) w.at("mlm.bias")[j] = 0.25f;
    std::vector<std::uint32_t> ids{3, 7, 9, 11, 4};
    auto logits = forward_mlm(c, w, ids);
    for (float x : logits.data()) CHECK(x == 0.25f);
}

TEST_CASE("without position embeddings the encoder is permutation-equivariant") {
    auto c = tiny_config();
    auto w = init_weights(c, 3);
    w.at("emb.position").fill(0.0f);
    std::vector<std::uint32_t> ids{3, 7, 9, 11, 4};
    std::vector<std::uint32_t> swapped{3, 11, 9, 7, 4};
    auto a = forward_mlm(c, w, ids);
    auto b = forward_mlm(c, w, swapped);
    for (std::size_t j = 0; j < c.vocab_size; ++j) {
        CHECK(a.at(1, j) == doctest::Approx(b.at(3, j)).epsilon(1e-5));
        CHECK(a.at(3, j) == doctest::Approx(b.at(1, j)).epsilon(1e-5));
        CHECK(a.at(2, j) == doctest::Approx(b.at(2, j)).epsilon(1e-5));
    }

    // with positions the same swap is not a pure row permutation
    auto w2 = init_weights(c, 3);
    auto p = forward_mlm(c, w2, ids);
    auto q = forward_mlm(c, w2, swapped);
    double diff = 0.0;
    for (std::size_t j = 0; j < c.vocab_size; ++j) diff += std::fabs(p.at(1, j) - q.at(3, j));
    CHECK(diff > 1e-4);
}

TEST_CASE("encoder gradients match finite differences") {
    const auto c = tiny_config();
    const DParams params = random_params(c, 17);
    std::vector<std::vector<std::uint32_t>> seqs{{3, 7, 9, 12, 4}, {3, 5, 5, 18, 6, 4}};
    const PackedBatch batch = pack(seqs, c);

    std::vector<std::int64_t> targets(batch.ids.size(), -1);
    targets[1] = 11;
    targets[3] = 2;
    targets[7] = 19;
    targets[8] = 5;
    LossFn mlm = [&](ad::Tape<double>&, const std::map<std::string, ad::Var<double>>& v) {
        auto logits = model::mlm_logits(v, model::hidden_states(c, v, batch));
        return ad::softmax_cross_entropy(logits, std::span<const std::int64_t>(targets));
    };
    CHECK(max_relative_error(mlm, params) < 1e-4);

    Rng rng(8);
    const DTensor proj = random_tensor({2, c.vocab_size}, rng);
    LossFn sparse = [&](ad::Tape<double>& t, const std::map<std::string, ad::Var<double>>& v) {
        return ad::sum(ad::mul(model::sparse_reps(c, v, batch), t.constant_ref(proj)));
    };
    CHECK(max_relative_error(sparse, params) < 1e-4);
}

TEST_CASE("encode_sparse equals direct max pooling over forward_mlm logits") {
    auto c = tiny_config();
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        auto w = init_weights(c, seed);
        Rng rng(seed);
        for (auto& x : w.at("mlm.bias").data()) x = static_cast<float>(rng.normal());
        std::vector<std::uint32_t> ids{3, 8, 2, 13, 17, 4};
        auto logits = forward_mlm(c, w, ids);
        auto rep = encode_sparse(c, w, ids);
        for (std::uint32_t j = 0; j < c.vocab_size; ++j) {
            double best = 0.0;
            if (!Vocabulary::is_special(j)) {
                for (std::size_t r : {1, 3, 4}) {  // content rows: not CLS, MASK, SEP
                    best = std::max(best, std::log1p(std::max(0.0, static_cast<double>(logits.at(r, j)))));
                }
            }
            CHECK(rep.weight(j) == doctest::Approx(best).epsilon(1e-5));
        }
        for (const auto& [term, weight] : rep.entries) CHECK(weight > 0.0f);
    }
}

TEST_CASE("encode_sparse hand cases") {
    auto c = tiny_config();
    auto w = zero_weights(c);
    std::vector<std::uint32_t> ids{3, 9, 4};

    w.at("mlm.bias").fill(-1.0f);
    CHECK(encode_sparse(c, w, ids).empty());

    w.at("mlm.bias")[12] = static_cast<float>(std::numbers::e - 1.0);
    w.at("mlm.bias")[Vocabulary::kUnk] = 5.0f;  // special columns never appear
    auto rep = encode_sparse(c, w, ids);
    REQUIRE(rep.nnz() == 1);
    CHECK(rep.entries[0].first == 12);
    CHECK(rep.entries[0].second == doctest::Approx(1.0));

    std::vector<std::uint32_t> specials{3, 2, 0, 4};
    CHECK_THROWS_WITH(encode_sparse(c, w, specials), doctest::Contains("empty content"));

    std::vector<std::vector<std::uint32_t>> batch{{3, 4}, ids};
    auto reps = encode_sparse_batch(c, w, batch);
    CHECK(reps[0].empty());
    CHECK(reps[1] == rep);
}

TEST_CASE("max pooling of log1p_relu over positions") {
    ad::Tape<double> tape;
    auto x = tape.constant(DTensor({2, 1}, {1.0, 3.0}));
    std::vector<std::size_t> offsets{0, 2};
    auto pooled = ad::segment_max(ad::log1p_relu(x), std::span<const std::size_t>(offsets), {true, true});
    CHECK(pooled.value().item() == doctest::Approx(std::log(4.0)));
}

TEST_CASE("pooled weight is monotone in each logit") {
    Rng rng(4);
    std::vector<std::size_t> offsets{0, 5};
    for (int trial = 0; trial < 50; ++trial) {
        DTensor x = random_tensor({5, 6}, rng);
        const std::size_t r = rng.below(5);
        const std::size_t j = rng.below(6);
        ad::Tape<double> tape;
        auto before = ad::segment_max(ad::log1p_relu(tape.constant(x)), std::span<const std::size_t>(offsets),
                                      std::vector<bool>(5, true)).value();
        x.at(r, j) += rng.uniform() * 2.0;
        auto after = ad::segment_max(ad::log1p_relu(tape.constant(x)), std::span<const std::size_t>(offsets),
                                     std::vector<bool>(5, true)).value();
        CHECK(after[j] >= before[j]);
    }
}

TEST_CASE("score") {
    auto q = SparseVector::from_pairs({{1, 1.0f}, {2, 2.0f}});
    auto d = SparseVector::from_pairs({{2, 3.0f}, {3, 5.0f}});
    CHECK(score(q, d) == doctest::Approx(6.0));
    CHECK(score(d, q) == score(q, d));
    auto e = SparseVector::from_pairs({{9, 2.0f}});
    CHECK(score(q, e) == 0.0);
    CHECK(score(e, e) == doctest::Approx(4.0));

    auto dropped = SparseVector::from_pairs({{4, 0.0f}, {5, -1.0f}, {6, 0.5f}});
    CHECK(dropped.nnz() == 1);
    CHECK_THROWS(SparseVector::from_pairs({{1, 1.0f}, {1, 2.0f}}));

    Rng rng(6);
    for (int i = 0; i < 20; ++i) {
        std::vector<std::pair<std::uint32_t, float>> a, b;
        for (std::uint32_t t = 0; t < 30; ++t) {
            if (rng.bernoulli(0.3)) a.emplace_back(t, static_cast<float>(rng.uniform()));
            if (rng.bernoulli(0.3)) b.emplace_back(t, static_cast<float>(rng.uniform()));
        }
        auto va = SparseVector::from_pairs(a);
        auto vb = SparseVector::from_pairs(b);
        CHECK(score(va, vb) == score(vb, va));
        CHECK(score(va, vb) >= 0.0);
    }
}

TEST_CASE("MLM loss drops by at least 30% within 200 steps") {
    const Corpus corpus = toy_corpus(50, 7);
    const Vocabulary vocab = vocab_of(corpus);
    ModelConfig c;  // toy defaults
    c.vocab_size = vocab.size();
    const auto tokens = tokenize_corpus(corpus, vocab, c.max_seq_len);

    StageSpec spec;
    spec.stage = Stage::Base;
    spec.steps = 200;
    spec.seed = 7;
    const Checkpoint init = make_checkpoint(init_weights(c, spec.seed), c, Stage::Base, {}, 0);
    const double before = evaluate_mlm_loss(c, init.weights, tokens, 0.15, 7);
    const Checkpoint trained = train_base(c, tokens, spec, 0);
    const double after = evaluate_mlm_loss(c, trained.weights, tokens, 0.15, 7);
    MESSAGE("MLM loss " << before << " -> " << after);
    CHECK(after < 0.7 * before);
}
