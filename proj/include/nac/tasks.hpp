#pragma once

// Desk-scale synthetic tasks and tokenizers.

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <memory>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "nac/params.hpp"
#include "nac/tensor.hpp"

namespace nac {

/// One example as symbol ids; `context` is only used by conditional models.
struct Sample {
    std::vector<std::size_t> tokens;
    std::size_t label = 0;
    std::vector<std::size_t> context;
};

struct Batch {
    std::vector<std::vector<std::size_t>> tokens;
    std::vector<std::size_t> labels;
    std::vector<std::vector<std::size_t>> contexts;

    std::size_t size() const { return labels.size(); }
};

// ------------------------------------------------------------------ parity

struct ParitySample {
    std::vector<int> bits;
    int label = 0;
};

ParitySample gen_parity(std::size_t length, std::uint64_t seed);
int parity_of(const std::vector<int>& bits);

// ----------------------------------------------------------------- listops

/// Symbols: digits 0-9, "[MAX", "[MIN", "[MED", "[SM", "]".
const std::vector<std::string>& listops_vocabulary();

struct ListOpsSample {
    std::string text;  // space separated, e.g. "[MAX 2 9 0 ]"
    int label = 0;
};

/// Random expression with nesting depth <= max_depth and at most max_args
/// operands per operator, no longer than max_tokens symbols.
ListOpsSample gen_listops(std::size_t max_depth, std::size_t max_args, std::uint64_t seed,
                          std::size_t max_tokens = 256);
/// Recursive evaluator; throws ContractError on malformed input.
int evaluate_listops(const std::string& text);
std::vector<std::size_t> listops_token_ids(const std::string& text);

// ------------------------------------------------------------ byte text

/// Synthetic byte classification: label 1 iff a positive keyword was
/// planted among filler words.
std::pair<std::string, int> gen_keyword_text(std::size_t max_len, std::uint64_t seed);

/// One line per sample: "<label>\t<payload>".
struct LabeledText {
    int label = 0;
    std::string payload;
};
void write_dataset_tsv(std::ostream& os, const std::vector<LabeledText>& rows);
std::vector<LabeledText> read_dataset_tsv(std::istream& is);

// ------------------------------------------------------------- tokenizers

/// Learned symbol embeddings concatenated with learned positional codes.
struct SequenceTokenizer {
    Tensor embed;      // [vocab, d_emb]
    Tensor positions;  // [max_len, d_pos]; undefined when positions are off

    static SequenceTokenizer init(std::size_t vocab, std::size_t d_emb, std::size_t max_len, std::size_t d_pos,
                                  std::mt19937_64& rng);
    std::size_t width() const;
    std::size_t max_len() const { return positions.defined() ? positions.dim(0) : SIZE_MAX; }

    /// [N, d_tok] for one sequence (truncated to max_len).
    Tensor encode(const std::vector<std::size_t>& ids) const;

    struct Encoded {
        Tensor tokens;  // [B, N_max, d_tok]
        std::vector<std::size_t> lengths;
        bool ragged = false;
    };
    /// Pads with id 0 to the longest sequence in the batch.
    Encoded encode_batch(const std::vector<std::vector<std::size_t>>& seqs) const;

    void collect(ParamList& out, const std::string& prefix) const;
};

/// Tokenizes raw bytes (256-entry table), truncating at max_len.
Tensor byte_tokenize(const std::string& text, std::size_t max_len, const SequenceTokenizer& tok);
std::vector<std::size_t> byte_ids(const std::string& text, std::size_t max_len);

/// Flattened non-overlapping patches of an image [H, W, C]: [(H/p)(W/p), p*p*C].
Tensor extract_patches(const Tensor& image, std::size_t patch);
/// Inverse of extract_patches.
Tensor assemble_patches(const Tensor& patches, std::size_t height, std::size_t width, std::size_t channels,
                        std::size_t patch);

/// Hard-coded patch extractor, linear projection, learned positional codes.
struct PatchTokenizer {
    Tensor weight, bias;  // [d_tok - d_pos, p*p*C]
    Tensor positions;     // [max_patches, d_pos]
    std::size_t patch = 4;

    static PatchTokenizer init(std::size_t patch, std::size_t channels, std::size_t d_tok, std::size_t d_pos,
                               std::size_t max_patches, std::mt19937_64& rng);
    /// Projected patches before positional concat: [n_patches, d_tok - d_pos].
    Tensor embed(const Tensor& image) const;
    /// [n_patches, d_tok].
    Tensor operator()(const Tensor& image) const;
    void collect(ParamList& out, const std::string& prefix) const;
};

// ------------------------------------------------------------------ tasks

class Task {
public:
    virtual ~Task() = default;
    virtual std::string name() const = 0;
    virtual Sample sample(std::mt19937_64& rng) const = 0;
    virtual std::size_t vocab() const = 0;
    virtual std::size_t max_len() const = 0;
    virtual std::size_t classes() const = 0;
    /// Size of the context vocabulary; 0 for tasks without context.
    virtual std::size_t context_vocab() const { return 0; }
    virtual std::size_t context_len() const { return 0; }

    Batch batch(std::size_t size, std::mt19937_64& rng) const;
};

class ParityTask final : public Task {
public:
    explicit ParityTask(std::size_t length) : length_(length) {}
    std::string name() const override { return "parity"; }
    Sample sample(std::mt19937_64& rng) const override;
    std::size_t vocab() const override { return 2; }
    std::size_t max_len() const override { return length_; }
    std::size_t classes() const override { return 2; }

private:
    std::size_t length_;
};

class ListOpsTask final : public Task {
public:
    ListOpsTask(std::size_t max_depth, std::size_t max_args, std::size_t max_len)
        : depth_(max_depth), args_(max_args), len_(max_len) {}
    std::string name() const override { return "listops"; }
    Sample sample(std::mt19937_64& rng) const override;
    std::size_t vocab() const override { return listops_vocabulary().size(); }
    std::size_t max_len() const override { return len_; }
    std::size_t classes() const override { return 10; }

private:
    std::size_t depth_, args_, len_;
};

/// Byte-level text classification, either synthetic keyword text or rows
/// loaded from a TSV file (sampled uniformly).
class TextTask final : public Task {
public:
    explicit TextTask(std::size_t max_len, std::vector<LabeledText> rows = {});
    std::string name() const override { return "text"; }
    Sample sample(std::mt19937_64& rng) const override;
    std::size_t vocab() const override { return 256; }
    std::size_t max_len() const override { return len_; }
    std::size_t classes() const override { return classes_; }

private:
    std::size_t len_;
    std::vector<LabeledText> rows_;
    std::size_t classes_ = 2;
};

/// Bit sequences labelled by one of two rules chosen by a context token:
/// context 0 -> majority bit, context 1 -> minority bit.
class RuleContextTask final : public Task {
public:
    explicit RuleContextTask(std::size_t length) : length_(length | 1) {}
    std::string name() const override { return "rules"; }
    Sample sample(std::mt19937_64& rng) const override;
    std::size_t vocab() const override { return 2; }
    std::size_t max_len() const override { return length_; }
    std::size_t classes() const override { return 2; }
    std::size_t context_vocab() const override { return 2; }
    std::size_t context_len() const override { return 1; }

private:
    std::size_t length_;
};

}  // namespace nac
