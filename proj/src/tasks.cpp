#include "nac/tasks.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>

namespace nac {

namespace {

std::size_t uniform_index(std::mt19937_64& rng, std::size_t n) {
    return static_cast<std::size_t>(rng() % n);
}

}  // namespace

// ------------------------------------------------------------------- parity

int parity_of(const std::vector<int>& bits) {
    int x = 0;
    for (int b : bits) x ^= (b & 1);
    return x;
}

ParitySample gen_parity(std::size_t length, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    ParitySample s;
    s.bits.resize(length);
    for (auto& b : s.bits) b = static_cast<int>(rng() & 1U);
    s.label = parity_of(s.bits);
    return s;
}

// ------------------------------------------------------------------ listops

const std::vector<std::string>& listops_vocabulary() {
    static const std::vector<std::string> vocab = {"0", "1", "2", "3", "4", "5", "6", "7",
                                                   "8", "9", "[MAX", "[MIN", "[MED", "[SM", "]"};
    return vocab;
}

namespace {

enum class ListOp { Max, Min, Med, SumMod };

int apply_listop(ListOp op, std::vector<int> args) {
    switch (op) {
        case ListOp::Max: return *std::max_element(args.begin(), args.end());
        case ListOp::Min: return *std::min_element(args.begin(), args.end());
        case ListOp::Med: {
            std::sort(args.begin(), args.end());
            const std::size_t n = args.size();
            // even counts take the floor of the two middle values' mean
            return n % 2 ? args[n / 2] : (args[n / 2 - 1] + args[n / 2]) / 2;
        }
        case ListOp::SumMod: return std::accumulate(args.begin(), args.end(), 0) % 10;
    }
    return 0;
}

const char* listop_symbol(ListOp op) {
    switch (op) {
        case ListOp::Max: return "[MAX";
        case ListOp::Min: return "[MIN";
        case ListOp::Med: return "[MED";
        case ListOp::SumMod: return "[SM";
    }
    return "";
}

struct ListOpsBuilder {
    std::mt19937_64& rng;
    std::size_t max_depth;
    std::size_t max_args;
    std::vector<std::string> out;

    int build(std::size_t depth) {
        // leaves become likelier with depth
        const bool leaf = depth >= max_depth || (depth > 0 && uniform_index(rng, 10) < 3 + depth);
        if (leaf) {
            const int digit = static_cast<int>(uniform_index(rng, 10));
            out.push_back(std::to_string(digit));
            return digit;
        }
        const auto op = static_cast<ListOp>(uniform_index(rng, 4));
        out.emplace_back(listop_symbol(op));
        const std::size_t n = 2 + uniform_index(rng, std::max<std::size_t>(max_args, 2) - 1);
        std::vector<int> args;
        for (std::size_t i = 0; i < n; ++i) args.push_back(build(depth + 1));
        out.emplace_back("]");
        return apply_listop(op, std::move(args));
    }
};

struct ListOpsParser {
    std::vector<std::string> toks;
    std::size_t pos = 0;

    int parse() {
        if (pos >= toks.size()) throw ContractError("listops: unexpected end of expression");
        const std::string& t = toks[pos++];
        if (t.size() == 1 && std::isdigit(static_cast<unsigned char>(t[0]))) return t[0] - '0';
        ListOp op;
        if (t == "[MAX") op = ListOp::Max;
        else if (t == "[MIN") op = ListOp::Min;
        else if (t == "[MED") op = ListOp::Med;
        else if (t == "[SM") op = ListOp::SumMod;
        else throw ContractError("listops: unexpected symbol '" + t + "'");
        std::vector<int> args;
        while (pos < toks.size() && toks[pos] != "]") args.push_back(parse());
        if (pos >= toks.size()) throw ContractError("listops: missing closing bracket");
        ++pos;
        if (args.empty()) throw ContractError("listops: operator without operands");
        return apply_listop(op, std::move(args));
    }
};

std::vector<std::string> split_ws(const std::string& text) {
    std::istringstream is(text);
    std::vector<std::string> out;
    std::string t;
    while (is >> t) out.push_back(t);
    return out;
}

}  // namespace

ListOpsSample gen_listops(std::size_t max_depth, std::size_t max_args, std::uint64_t seed, std::size_t max_tokens) {
    if (max_depth == 0 || max_args == 0 || max_tokens == 0) throw ContractError("gen_listops: limits must be positive");
    std::mt19937_64 rng(seed);
    for (;;) {
        ListOpsBuilder b{rng, max_depth, max_args, {}};
        const int label = b.build(0);
        if (b.out.size() > max_tokens) continue;
        ListOpsSample s;
        for (std::size_t i = 0; i < b.out.size(); ++i) s.text += (i ? " " : "") + b.out[i];
        s.label = label;
        return s;
    }
}

int evaluate_listops(const std::string& text) {
    ListOpsParser p{split_ws(text)};
    const int v = p.parse();
    if (p.pos != p.toks.size()) throw ContractError("listops: trailing symbols after expression");
    return v;
}

std::vector<std::size_t> listops_token_ids(const std::string& text) {
    const auto& vocab = listops_vocabulary();
    std::vector<std::size_t> ids;
    for (const auto& t : split_ws(text)) {
        auto it = std::find(vocab.begin(), vocab.end(), t);
        if (it == vocab.end()) throw ContractError("listops: unknown symbol '" + t + "'");
        ids.push_back(static_cast<std::size_t>(it - vocab.begin()));
    }
    return ids;
}

// --------------------------------------------------------------------- text

std::pair<std::string, int> gen_keyword_text(std::size_t max_len, std::uint64_t seed) {
    static const std::vector<std::string> filler = {"the", "movie", "was", "a", "plot", "actor", "scene",
                                                    "and", "it", "story", "with", "of", "film", "very"};
    static const std::vector<std::string> positive = {"great", "superb", "lovely"};
    static const std::vector<std::string> negative = {"awful", "boring", "dreadful"};
    std::mt19937_64 rng(seed);
    const int label = static_cast<int>(rng() & 1U);
    const std::size_t words = 4 + uniform_index(rng, 8);
    const std::size_t slot = uniform_index(rng, words);
    std::string text;
    for (std::size_t w = 0; w < words; ++w) {
        const auto& pool = w == slot ? (label ? positive : negative) : filler;
        text += (w ? " " : "") + pool[uniform_index(rng, pool.size())];
    }
    if (text.size() > max_len) {
        // keep the planted word inside the window
        std::size_t start = 0;
        for (std::size_t w = 0, pos = 0; w <= slot && pos < text.size(); ++w) {
            start = pos;
            pos = text.find(' ', pos);
            if (pos == std::string::npos) break;
            ++pos;
        }
        start = std::min(start, text.size() - max_len);
        text = text.substr(start, max_len);
    }
    return {text, label};
}

void write_dataset_tsv(std::ostream& os, const std::vector<LabeledText>& rows) {
    for (const auto& r : rows) {
        if (r.payload.find_first_of("\t\n") != std::string::npos) {
            throw ContractError("dataset payloads may not contain tabs or newlines");
        }
        os << r.label << '\t' << r.payload << '\n';
    }
}

std::vector<LabeledText> read_dataset_tsv(std::istream& is) {
    std::vector<LabeledText> rows;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto tab = line.find('\t');
        if (tab == std::string::npos) throw ContractError("dataset line " + std::to_string(lineno) + ": missing tab");
        LabeledText r;
        try {
            std::size_t used = 0;
            r.label = std::stoi(line.substr(0, tab), &used);
            if (used != tab || r.label < 0) throw std::invalid_argument("label");
        } catch (const std::exception&) {
            throw ContractError("dataset line " + std::to_string(lineno) + ": invalid label");
        }
        r.payload = line.substr(tab + 1);
        rows.push_back(std::move(r));
    }
    return rows;
}

// --------------------------------------------------------------- tokenizers

SequenceTokenizer SequenceTokenizer::init(std::size_t vocab, std::size_t d_emb, std::size_t max_len, std::size_t d_pos,
                                          std::mt19937_64& rng) {
    SequenceTokenizer t;
    t.embed = Tensor::normal({vocab, d_emb}, 1.0, rng, true);
    if (d_pos > 0) t.positions = Tensor::normal({max_len, d_pos}, 1.0, rng, true);
    return t;
}

std::size_t SequenceTokenizer::width() const {
    return embed.dim(1) + (positions.defined() ? positions.dim(1) : 0);
}

Tensor SequenceTokenizer::encode(const std::vector<std::size_t>& ids) const {
    auto e = encode_batch({ids});
    return reshape(e.tokens, {e.tokens.dim(1), e.tokens.dim(2)});
}

SequenceTokenizer::Encoded SequenceTokenizer::encode_batch(const std::vector<std::vector<std::size_t>>& seqs) const {
    if (seqs.empty()) throw ContractError("encode_batch: empty batch");
    Encoded enc;
    std::size_t n = 0;
    for (const auto& s : seqs) {
        if (s.empty()) throw ContractError("tokenizer: empty sequence");
        enc.lengths.push_back(std::min(s.size(), max_len()));
        n = std::max(n, enc.lengths.back());
    }
    std::vector<std::size_t> ids(seqs.size() * n, 0);
    for (std::size_t b = 0; b < seqs.size(); ++b) {
        if (enc.lengths[b] != n) enc.ragged = true;
        std::copy_n(seqs[b].begin(), enc.lengths[b], ids.begin() + static_cast<std::ptrdiff_t>(b * n));
    }
    Tensor emb = embedding(embed, ids, {seqs.size(), n});
    if (positions.defined()) {
        std::vector<std::size_t> pos_ids(seqs.size() * n);
        for (std::size_t i = 0; i < pos_ids.size(); ++i) pos_ids[i] = i % n;
        emb = concat_last(emb, embedding(positions, pos_ids, {seqs.size(), n}));
    }
    enc.tokens = emb;
    return enc;
}

void SequenceTokenizer::collect(ParamList& out, const std::string& prefix) const {
    add_param(out, prefix + ".embed", embed, false);
    if (positions.defined()) add_param(out, prefix + ".positions", positions, false);
}

std::vector<std::size_t> byte_ids(const std::string& text, std::size_t max_len) {
    if (text.empty()) throw ContractError("byte_tokenize: empty text");
    std::vector<std::size_t> ids;
    for (std::size_t i = 0; i < std::min(text.size(), max_len); ++i) ids.push_back(static_cast<unsigned char>(text[i]));
    return ids;
}

Tensor byte_tokenize(const std::string& text, std::size_t max_len, const SequenceTokenizer& tok) {
    if (tok.embed.dim(0) != 256) throw DimensionError("byte_tokenize: tokenizer must have 256 embedding rows");
    return tok.encode(byte_ids(text, max_len));
}

Tensor extract_patches(const Tensor& image, std::size_t patch) {
    if (image.rank() != 3) throw DimensionError("extract_patches: image must be [H, W, C], got " + shape_str(image.shape()));
    const std::size_t h = image.dim(0), w = image.dim(1), c = image.dim(2);
    if (patch == 0 || h % patch != 0 || w % patch != 0) {
        throw ContractError("patch size " + std::to_string(patch) + " does not divide image " + shape_str(image.shape()));
    }
    const std::size_t ph = h / patch, pw = w / patch;
    // [H, W, C] -> [ph, p, pw, p, C] -> [ph, pw, p, p, C]
    return reshape(permute(reshape(image, {ph, patch, pw, patch, c}), {0, 2, 1, 3, 4}), {ph * pw, patch * patch * c});
}

Tensor assemble_patches(const Tensor& patches, std::size_t height, std::size_t width, std::size_t channels,
                        std::size_t patch) {
    const std::size_t ph = height / patch, pw = width / patch;
    return reshape(permute(reshape(patches, {ph, pw, patch, patch, channels}), {0, 2, 1, 3, 4}),
                   {height, width, channels});
}

PatchTokenizer PatchTokenizer::init(std::size_t patch, std::size_t channels, std::size_t d_tok, std::size_t d_pos,
                                    std::size_t max_patches, std::mt19937_64& rng) {
    if (d_tok <= d_pos) throw ContractError("patch tokenizer: d_tok must exceed the positional width");
    PatchTokenizer t;
    const std::size_t in = patch * patch * channels;
    t.weight = Tensor::normal({d_tok - d_pos, in}, 1.0 / std::sqrt(static_cast<double>(in)), rng, true);
    t.bias = Tensor::zeros({d_tok - d_pos}, true);
    t.positions = Tensor::normal({max_patches, d_pos}, 1.0, rng, true);
    t.patch = patch;
    return t;
}

Tensor PatchTokenizer::embed(const Tensor& image) const { return linear(extract_patches(image, patch), weight, bias); }

Tensor PatchTokenizer::operator()(const Tensor& image) const {
    const Tensor e = embed(image);
    const std::size_t n = e.dim(0);
    if (n > positions.dim(0)) throw ContractError("patch tokenizer: more patches than positional codes");
    std::vector<std::size_t> rows(n);
    std::iota(rows.begin(), rows.end(), 0);
    return concat_last(e, index_select(positions, rows));
}

void PatchTokenizer::collect(ParamList& out, const std::string& prefix) const {
    add_param(out, prefix + ".weight", weight);
    add_param(out, prefix + ".bias", bias);
    add_param(out, prefix + ".positions", positions, false);
}

// -------------------------------------------------------------------- tasks

Batch Task::batch(std::size_t size, std::mt19937_64& rng) const {
    Batch b;
    for (std::size_t i = 0; i < size; ++i) {
        Sample s = sample(rng);
        b.tokens.push_back(std::move(s.tokens));
        b.labels.push_back(s.label);
        b.contexts.push_back(std::move(s.context));
    }
    return b;
}

Sample ParityTask::sample(std::mt19937_64& rng) const {
    const auto p = gen_parity(length_, rng());
    Sample s;
    for (int b : p.bits) s.tokens.push_back(static_cast<std::size_t>(b));
    s.label = static_cast<std::size_t>(p.label);
    return s;
}

Sample ListOpsTask::sample(std::mt19937_64& rng) const {
    const auto l = gen_listops(depth_, args_, rng(), len_);
    return {listops_token_ids(l.text), static_cast<std::size_t>(l.label), {}};
}

TextTask::TextTask(std::size_t max_len, std::vector<LabeledText> rows) : len_(max_len), rows_(std::move(rows)) {
    for (const auto& r : rows_) {
        if (r.payload.empty()) throw ContractError("text task: empty payload");
        classes_ = std::max(classes_, static_cast<std::size_t>(r.label) + 1);
    }
}

Sample TextTask::sample(std::mt19937_64& rng) const {
    if (rows_.empty()) {
        auto [text, label] = gen_keyword_text(len_, rng());
        return {byte_ids(text, len_), static_cast<std::size_t>(label), {}};
    }
    const auto& r = rows_[uniform_index(rng, rows_.size())];
    return {byte_ids(r.payload, len_), static_cast<std::size_t>(r.label), {}};
}

Sample RuleContextTask::sample(std::mt19937_64& rng) const {
    Sample s;
    std::size_t ones = 0;
    for (std::size_t i = 0; i < length_; ++i) {
        const std::size_t b = rng() & 1U;
        ones += b;
        s.tokens.push_back(b);
    }
    const std::size_t majority = 2 * ones > length_ ? 1 : 0;
    const std::size_t rule = rng() & 1U;
    s.context = {rule};
    s.label = rule == 0 ? majority : 1 - majority;
    return s;
}

}  // namespace nac
