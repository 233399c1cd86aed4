#include <doctest.h>

#include <algorithm>
#include <random>
#include <set>
#include <sstream>
#include <string>

#include "nac/tasks.hpp"

using namespace nac;

namespace {

// Stack-machine evaluator used as an oracle for the recursive one. Even-sized
// medians take the floor of the two middle values' mean.
struct Oracle {
    int value = 0;
    std::size_t depth = 0;
    std::size_t symbols = 0;
};

Oracle stack_eval(const std::string& text) {
    std::istringstream is(text);
    std::vector<std::pair<std::string, std::vector<int>>> stack;
    Oracle o;
    std::string t;
    int last = -1;
    while (is >> t) {
        ++o.symbols;
        if (t[0] == '[') {
            stack.push_back({t, {}});
            o.depth = std::max(o.depth, stack.size());
        } else if (t == "]") {
            auto [op, xs] = stack.back();
            stack.pop_back();
            int v = 0;
            std::sort(xs.begin(), xs.end());
            if (op == "[MAX") v = xs.back();
            else if (op == "[MIN") v = xs.front();
            else if (op == "[SM") {
                for (int x : xs) v += x;
                v %= 10;
            } else {
                const std::size_t n = xs.size();
                v = n % 2 ? xs[n / 2] : (xs[n / 2 - 1] + xs[n / 2]) / 2;
            }
            if (stack.empty()) last = v;
            else stack.back().second.push_back(v);
        } else {
            const int d = t[0] - '0';
            if (stack.empty()) last = d;
            else stack.back().second.push_back(d);
        }
    }
    o.value = last;
    return o;
}

}  // namespace

TEST_CASE("parity examples") {
    CHECK(parity_of({0, 0, 0, 0}) == 0);
    CHECK(parity_of({1, 0, 0, 0}) == 1);
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        const ParitySample s = gen_parity(16, seed);
        REQUIRE(s.bits.size() == 16);
        int x = 0;
        for (int b : s.bits) x ^= b;
        CHECK(s.label == x);
    }
}

TEST_CASE("listops examples") {
    CHECK(evaluate_listops("[MAX 2 9 0 ]") == 9);
    CHECK(evaluate_listops("[MIN [MAX 1 2 ] 0 ]") == 0);
    CHECK(evaluate_listops("7") == 7);
    CHECK(evaluate_listops("[SM 9 8 7 ]") == 4);
    CHECK(evaluate_listops("[MED 1 9 4 ]") == 4);
    CHECK(evaluate_listops("[MED 1 4 ]") == 2);
    CHECK_THROWS_AS(evaluate_listops("[MAX 2 9"), ContractError);
    CHECK_THROWS_AS(evaluate_listops("[MAX ]"), ContractError);
    CHECK_THROWS_AS(evaluate_listops("3 4"), ContractError);
    CHECK_THROWS_AS(evaluate_listops("[FOO 1 ]"), ContractError);
}

TEST_CASE("listops labels agree with the oracle on 10000 samples") {
    std::set<int> labels;
    for (std::uint64_t seed = 0; seed < 10000; ++seed) {
        const ListOpsSample s = gen_listops(4, 5, seed);
        const Oracle o = stack_eval(s.text);
        REQUIRE(o.value == s.label);
        REQUIRE(evaluate_listops(s.text) == s.label);
        REQUIRE(o.depth <= 4);
        REQUIRE(o.symbols <= 256);
        labels.insert(s.label);
    }
    CHECK(labels.size() == 10);
    const auto ids = listops_token_ids("[SM 3 ]");
    CHECK(ids == std::vector<std::size_t>{13, 3, 14});
}

TEST_CASE("generators are pure functions of the seed") {
    CHECK(gen_parity(16, 5).bits == gen_parity(16, 5).bits);
    CHECK(gen_listops(4, 5, 5).text == gen_listops(4, 5, 5).text);
    CHECK(gen_keyword_text(64, 5) == gen_keyword_text(64, 5));
    const ParityTask task(8);
    std::mt19937_64 a(1), b(1);
    CHECK(task.batch(4, a).tokens == task.batch(4, b).tokens);
}

TEST_CASE("byte tokenizer") {
    std::mt19937_64 rng(2);
    const SequenceTokenizer tok = SequenceTokenizer::init(256, 6, 512, 0, rng);
    const Tensor a = byte_tokenize("A", 512, tok);
    REQUIRE(a.shape() == Shape{1, 6});
    for (std::size_t k = 0; k < 6; ++k) CHECK(a.at({0, k}) == tok.embed.at({65, k}));
    CHECK_THROWS_AS(byte_tokenize("", 512, tok), ContractError);

    const Tensor x = byte_tokenize("hello world", 512, tok), y = byte_tokenize("hello worle", 512, tok);
    std::size_t differing = 0;
    for (std::size_t r = 0; r < 11; ++r) {
        bool diff = false;
        for (std::size_t k = 0; k < 6; ++k) diff |= x.at({r, k}) != y.at({r, k});
        differing += diff;
    }
    CHECK(differing == 1);
    CHECK(byte_ids("abcdef", 4) == std::vector<std::size_t>{97, 98, 99, 100});
}

TEST_CASE("sequence tokenizer concatenates positions and pads batches") {
    std::mt19937_64 rng(3);
    const SequenceTokenizer tok = SequenceTokenizer::init(3, 4, 5, 2, rng);
    CHECK(tok.width() == 6);
    const auto enc = tok.encode_batch({{1, 2}, {0, 1, 2, 2, 1, 0, 0}});
    CHECK(enc.tokens.shape() == Shape{2, 5, 6});
    CHECK(enc.lengths == std::vector<std::size_t>{2, 5});
    CHECK(enc.ragged);
    CHECK(enc.tokens.at({0, 1, 0}) == tok.embed.at({2, 0}));
    CHECK(enc.tokens.at({0, 1, 4}) == tok.positions.at({1, 0}));
}

TEST_CASE("patch tokenizer") {
    std::mt19937_64 rng(4);
    const Tensor image = Tensor::normal({8, 8, 3}, 1.0, rng);
    const Tensor patches = extract_patches(image, 4);
    CHECK(patches.shape() == Shape{4, 48});
    CHECK(assemble_patches(patches, 8, 8, 3, 4).values() == image.values());
    // second patch starts at column 4 of row 0
    CHECK(patches.at({1, 0}) == image.at({0, 4, 0}));
    CHECK_THROWS_AS(extract_patches(Tensor::zeros({6, 8, 3}), 4), ContractError);

    const PatchTokenizer pt = PatchTokenizer::init(4, 3, 16, 4, 4, rng);
    const Tensor flat = pt.embed(Tensor::full({8, 8, 3}, 0.3));
    CHECK(flat.shape() == Shape{4, 12});
    for (std::size_t r = 1; r < 4; ++r)
        for (std::size_t k = 0; k < 12; ++k) CHECK(flat.at({r, k}) == flat.at({0, k}));
    CHECK(pt(image).shape() == Shape{4, 16});
}

TEST_CASE("dataset tsv round trip") {
    const std::vector<LabeledText> rows = {{1, "a fine day"}, {0, "rain again"}, {3, ""}};
    std::ostringstream os;
    write_dataset_tsv(os, rows);
    CHECK(os.str() == "1\ta fine day\n0\train again\n3\t\n");
    std::istringstream is(os.str());
    const auto back = read_dataset_tsv(is);
    REQUIRE(back.size() == 3);
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(back[i].label == rows[i].label);
        CHECK(back[i].payload == rows[i].payload);
    }
    std::ostringstream bad;
    CHECK_THROWS_AS(write_dataset_tsv(bad, {{0, "tab\there"}}), ContractError);
    std::istringstream missing("1 no tab\n");
    CHECK_THROWS_AS(read_dataset_tsv(missing), ContractError);
}

TEST_CASE("tasks") {
    std::mt19937_64 rng(5);
    const RuleContextTask rules(8);
    CHECK(rules.max_len() == 9);
    for (int i = 0; i < 200; ++i) {
        const Sample s = rules.sample(rng);
        REQUIRE(s.context.size() == 1);
        const auto ones = static_cast<std::size_t>(std::count(s.tokens.begin(), s.tokens.end(), 1u));
        const std::size_t majority = ones * 2 > s.tokens.size();
        CHECK(s.label == (s.context[0] == 0 ? majority : 1 - majority));
    }
    const TextTask text(64);
    for (int i = 0; i < 50; ++i) {
        const Sample s = text.sample(rng);
        CHECK(s.tokens.size() <= 64);
        CHECK(s.label < 2);
    }
    const ListOpsTask lo(3, 4, 128);
    const Sample s = lo.sample(rng);
    CHECK(s.label < 10);
    CHECK(s.tokens.size() <= 128);
}
