// SPDX-License-Identifier: Apache-2.0
#include "echo/tasks.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "echo/tensor.hpp"

namespace echo {

void Dataset::validate() const {
  for (std::size_t k = 0; k < samples.size(); ++k) {
    const Sample& s = samples[k];
    if (s.tokens.empty()) throw DataError("sample " + std::to_string(k) + " has no tokens");
    for (std::size_t t = 0; t < s.tokens.size(); ++t)
      if (s.tokens[t] >= vocab_size)
        throw DataError("sample " + std::to_string(k) + ": token " + std::to_string(s.tokens[t]) +
                        " at position " + std::to_string(t + 1) + " exceeds vocab_size " +
                        std::to_string(vocab_size));
    if (s.label >= num_classes)
      throw DataError("sample " + std::to_string(k) + ": label " + std::to_string(s.label) +
                      " exceeds num_classes " + std::to_string(num_classes));
    if (s.meta.trigger_position &&
        (*s.meta.trigger_position < 1 || *s.meta.trigger_position > s.tokens.size()))
      throw DataError("sample " + std::to_string(k) + ": trigger position out of range");
  }
}

// --- distractor ------------------------------------------------------------

void DistractorSpec::validate() const {
  if (seq_len == 0) throw SpecError("seq_len must be positive");
  if (window_lo < 1 || window_lo > window_hi || window_hi > seq_len)
    throw SpecError("trigger window [" + std::to_string(window_lo) + ", " +
                    std::to_string(window_hi) + "] does not fit in [1, " + std::to_string(seq_len) +
                    "]");
  if (num_classes < 2) throw SpecError("num_classes must be at least 2");
  if (noise_vocab_size < 1) throw SpecError("noise_vocab_size must be positive");
  if (num_distractors > seq_len - window_hi)
    throw SpecError("cannot place " + std::to_string(num_distractors) + " distractors in the " +
                    std::to_string(seq_len - window_hi) + " steps after the trigger window");
}

namespace {

// Fills one sample. `pinned` fixes the trigger position; otherwise it is
// drawn uniformly inside the window.
Sample make_distractor_sample(const DistractorSpec& spec, std::uint64_t sample_seed,
                              std::optional<std::size_t> pinned) {
  Rng rng(sample_seed);
  Sample s;
  s.label = static_cast<std::size_t>(rng.uniform_int(spec.num_classes));
  const std::size_t trigger =
      pinned ? *pinned
             : static_cast<std::size_t>(rng.uniform_int(static_cast<std::int64_t>(spec.window_lo),
                                                        static_cast<std::int64_t>(spec.window_hi)));

  std::vector<std::size_t> slots;
  for (std::size_t p = spec.window_hi + 1; p <= spec.seq_len; ++p)
    if (p != trigger) slots.push_back(p);
  if (slots.size() < spec.num_distractors)
    throw SpecError("no room for distractors around trigger position " + std::to_string(trigger));
  // Partial Fisher-Yates: the first num_distractors slots are a uniform
  // draw without replacement.
  for (std::size_t k = 0; k < spec.num_distractors; ++k) {
    const std::size_t j = k + static_cast<std::size_t>(rng.uniform_int(slots.size() - k));
    std::swap(slots[k], slots[j]);
  }
  std::vector<std::size_t> distractors(
      slots.begin(), slots.begin() + static_cast<std::ptrdiff_t>(spec.num_distractors));
  std::sort(distractors.begin(), distractors.end());

  s.tokens.resize(spec.seq_len);
  for (auto& tok : s.tokens) tok = static_cast<std::size_t>(rng.uniform_int(spec.noise_vocab_size));
  s.tokens[trigger - 1] = spec.trigger_token(s.label);
  for (std::size_t p : distractors) {
    // Uniform over the other classes.
    std::size_t cls = static_cast<std::size_t>(rng.uniform_int(spec.num_classes - 1));
    if (cls >= s.label) ++cls;
    s.tokens[p - 1] = spec.trigger_token(cls);
  }
  s.meta.trigger_position = trigger;
  s.meta.distractor_positions = std::move(distractors);
  return s;
}

Dataset distractor_dataset(const DistractorSpec& spec, std::size_t n,
                           std::optional<std::size_t> pinned) {
  spec.validate();
  if (n == 0) throw SpecError("dataset size must be positive");
  Dataset d;
  d.task = "distractor";
  d.vocab_size = spec.vocab_size();
  d.num_classes = spec.num_classes;
  d.samples.resize(n);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(n); ++i)
    d.samples[static_cast<std::size_t>(i)] =
        make_distractor_sample(spec, derive_seed(spec.seed, static_cast<std::uint64_t>(i)), pinned);
  return d;
}

}  // namespace

Dataset gen_distractor(const DistractorSpec& spec, std::size_t n) {
  return distractor_dataset(spec, n, std::nullopt);
}

Dataset gen_distractor_shifted(const DistractorSpec& spec, std::size_t trigger_position,
                               std::size_t n) {
  spec.validate();
  if (trigger_position < 1 || trigger_position > spec.seq_len)
    throw SpecError("trigger position " + std::to_string(trigger_position) + " outside [1, " +
                    std::to_string(spec.seq_len) + "]");
  return distractor_dataset(spec, n, trigger_position);
}

Dataset strip_triggers(const Dataset& data, const DistractorSpec& spec, std::uint64_t seed) {
  Dataset out = data;
  for (std::size_t k = 0; k < out.samples.size(); ++k) {
    Sample& s = out.samples[k];
    if (!s.meta.trigger_position) throw SpecError("sample without trigger metadata");
    Rng rng(derive_seed(seed, k));
    s.tokens[*s.meta.trigger_position - 1] =
        static_cast<std::size_t>(rng.uniform_int(spec.noise_vocab_size));
  }
  return out;
}

// --- ListOps ---------------------------------------------------------------

void ListOpsSpec::validate() const {
  if (max_depth < 1) throw SpecError("max_depth must be at least 1");
  if (max_args < 2) throw SpecError("max_args must be at least 2");
  if (min_length > max_length) throw SpecError("min_length exceeds max_length");
  if (max_length < 5) throw SpecError("max_length below the shortest expression (5 tokens)");
  if (!(nest_probability >= 0.0 && nest_probability <= 1.0))
    throw SpecError("nest_probability must lie in [0, 1]");
}

namespace {

constexpr std::string_view kOpNames[] = {"MAX", "MIN", "MED", "SM"};

int apply(ListOp op, std::vector<int>& args) {
  switch (op) {
    case ListOp::max:
      return *std::max_element(args.begin(), args.end());
    case ListOp::min:
      return *std::min_element(args.begin(), args.end());
    case ListOp::med: {
      std::sort(args.begin(), args.end());
      return args[(args.size() - 1) / 2];
    }
    case ListOp::sm:
      return std::accumulate(args.begin(), args.end(), 0) % 10;
  }
  return 0;
}

struct Lexeme {
  std::string_view text;
  std::size_t offset;
};

std::vector<Lexeme> lex(std::string_view expr) {
  std::vector<Lexeme> out;
  std::size_t i = 0;
  while (i < expr.size()) {
    const char ch = expr[i];
    if (ch == ' ' || ch == '\t' || ch == '\n' || ch == '\r') {
      ++i;
    } else if (ch == '[' || ch == ']') {
      out.push_back({expr.substr(i, 1), i});
      ++i;
    } else {
      const std::size_t start = i;
      while (i < expr.size() && expr[i] != ' ' && expr[i] != '[' && expr[i] != ']' &&
             expr[i] != '\t' && expr[i] != '\n' && expr[i] != '\r')
        ++i;
      out.push_back({expr.substr(start, i - start), start});
    }
  }
  return out;
}

// Recursive descent over lexemes:
//   expr := digit | '[' OP expr expr+ ']'
class Parser {
 public:
  Parser(std::vector<Lexeme> lexemes, std::size_t end) : lx_(std::move(lexemes)), end_(end) {}

  int parse_all() {
    const int v = expr();
    if (pos_ != lx_.size()) throw ParseError("trailing input", lx_[pos_].offset);
    return v;
  }

 private:
  int expr() {
    if (pos_ >= lx_.size()) throw ParseError("unexpected end of expression", end_);
    const Lexeme& l = lx_[pos_];
    if (l.text == "[") {
      ++pos_;
      if (pos_ >= lx_.size()) throw ParseError("expected operator", end_);
      const ListOp op = op_of(lx_[pos_]);
      ++pos_;
      std::vector<int> args;
      while (pos_ < lx_.size() && lx_[pos_].text != "]") args.push_back(expr());
      if (pos_ >= lx_.size()) throw ParseError("missing ']'", end_);
      if (args.size() < 2)
        throw ParseError("operator needs at least two arguments", lx_[pos_].offset);
      ++pos_;
      return apply(op, args);
    }
    if (l.text.size() == 1 && l.text[0] >= '0' && l.text[0] <= '9') {
      ++pos_;
      return l.text[0] - '0';
    }
    throw ParseError("unexpected token '" + std::string(l.text) + "'", l.offset);
  }

  static ListOp op_of(const Lexeme& l) {
    for (std::size_t k = 0; k < std::size(kOpNames); ++k)
      if (l.text == kOpNames[k]) return static_cast<ListOp>(k);
    throw ParseError("unknown operator '" + std::string(l.text) + "'", l.offset);
  }

  std::vector<Lexeme> lx_;
  std::size_t end_;
  std::size_t pos_ = 0;
};

std::string_view token_text(std::size_t id) {
  static constexpr std::string_view digits[] = {"0", "1", "2", "3", "4", "5", "6", "7", "8", "9"};
  if (id < 10) return digits[id];
  if (id == listops_token::open) return "[";
  if (id == listops_token::close) return "]";
  if (id >= listops_token::op_base && id < listops_token::vocab_size)
    return kOpNames[id - listops_token::op_base];
  throw DataError("token id " + std::to_string(id) + " is not a ListOps token");
}

void gen_expr(Rng& rng, const ListOpsSpec& spec, std::size_t depth, TokenSeq& out) {
  out.push_back(listops_token::open);
  out.push_back(listops_token::op_base + static_cast<std::size_t>(rng.uniform_int(4)));
  const auto arity = static_cast<std::size_t>(
      rng.uniform_int(std::int64_t{2}, static_cast<std::int64_t>(spec.max_args)));
  for (std::size_t a = 0; a < arity; ++a) {
    if (depth < spec.max_depth && rng.bernoulli(spec.nest_probability))
      gen_expr(rng, spec, depth + 1, out);
    else
      out.push_back(static_cast<std::size_t>(rng.uniform_int(10)));
  }
  out.push_back(listops_token::close);
}

}  // namespace

std::string listops_to_string(std::span<const std::size_t> tokens) {
  std::string out;
  for (std::size_t k = 0; k < tokens.size(); ++k) {
    const std::size_t id = tokens[k];
    const bool after_open = k > 0 && tokens[k - 1] == listops_token::open;
    if (k > 0 && !after_open && id != listops_token::close) out += ' ';
    out += token_text(id);
  }
  return out;
}

TokenSeq listops_tokenize(std::string_view expr) {
  TokenSeq out;
  for (const Lexeme& l : lex(expr)) {
    if (l.text == "[") {
      out.push_back(listops_token::open);
    } else if (l.text == "]") {
      out.push_back(listops_token::close);
    } else if (l.text.size() == 1 && l.text[0] >= '0' && l.text[0] <= '9') {
      out.push_back(static_cast<std::size_t>(l.text[0] - '0'));
    } else {
      auto it = std::find(std::begin(kOpNames), std::end(kOpNames), l.text);
      if (it == std::end(kOpNames))
        throw ParseError("unknown token '" + std::string(l.text) + "'", l.offset);
      out.push_back(listops_token::op_base +
                    static_cast<std::size_t>(std::distance(std::begin(kOpNames), it)));
    }
  }
  return out;
}

int eval_listops(std::string_view expr) { return Parser(lex(expr), expr.size()).parse_all(); }

int eval_listops(std::span<const std::size_t> tokens) {
  return eval_listops(listops_to_string(tokens));
}

Dataset gen_listops(const ListOpsSpec& spec, std::size_t n) {
  spec.validate();
  if (n == 0) throw SpecError("dataset size must be positive");
  Dataset d;
  d.task = "listops";
  d.vocab_size = listops_token::vocab_size;
  d.num_classes = ListOpsSpec::num_classes;
  d.samples.resize(n);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(n); ++i) {
    Rng rng(derive_seed(spec.seed, static_cast<std::uint64_t>(i)));
    Sample& s = d.samples[static_cast<std::size_t>(i)];
    // Rejection keeps lengths inside [min_length, max_length].
    do {
      s.tokens.clear();
      gen_expr(rng, spec, 1, s.tokens);
    } while (s.tokens.size() < spec.min_length || s.tokens.size() > spec.max_length);
    s.label = static_cast<std::size_t>(eval_listops(s.tokens));
  }
  return d;
}

// --- split -----------------------------------------------------------------

Splits split(const Dataset& data, std::array<double, 3> fractions, std::uint64_t seed) {
  double total = 0.0;
  for (double f : fractions) {
    if (!(f > 0.0)) throw SpecError("split fractions must be positive");
    total += f;
  }
  if (std::abs(total - 1.0) > 1e-9) throw SpecError("split fractions must sum to 1");
  const std::size_t n = data.size();
  const auto n_train =
      static_cast<std::size_t>(std::llround(fractions[0] * static_cast<double>(n)));
  const auto n_val = static_cast<std::size_t>(std::llround(fractions[1] * static_cast<double>(n)));
  if (n_train == 0 || n_val == 0 || n_train + n_val >= n)
    throw SpecError("split of " + std::to_string(n) + " samples leaves an empty part");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  rng.shuffle(order);

  Splits out;
  for (Dataset* part : {&out.train, &out.val, &out.test}) {
    part->task = data.task;
    part->vocab_size = data.vocab_size;
    part->num_classes = data.num_classes;
  }
  for (std::size_t k = 0; k < n; ++k) {
    Dataset& part = k < n_train ? out.train : k < n_train + n_val ? out.val : out.test;
    part.samples.push_back(data.samples[order[k]]);
  }
  return out;
}

// --- persistence -----------------------------------------------------------

void write_dataset(std::ostream& out, const Dataset& data) {
  out << "#echo-dataset v" << kDatasetFormatVersion << " task=" << data.task
      << " vocab_size=" << data.vocab_size << " num_classes=" << data.num_classes << '\n';
  for (const Sample& s : data.samples) {
    for (std::size_t t = 0; t < s.tokens.size(); ++t) out << (t ? " " : "") << s.tokens[t];
    out << '\t' << s.label;
    if (s.meta.trigger_position || !s.meta.distractor_positions.empty()) {
      out << '\t';
      bool first = true;
      if (s.meta.trigger_position) {
        out << "trigger=" << *s.meta.trigger_position;
        first = false;
      }
      if (!s.meta.distractor_positions.empty()) {
        out << (first ? "" : " ") << "distractors=";
        for (std::size_t k = 0; k < s.meta.distractor_positions.size(); ++k)
          out << (k ? "," : "") << s.meta.distractor_positions[k];
      }
    }
    out << '\n';
  }
}

namespace {

std::size_t parse_size(std::string_view text, std::size_t line) {
  if (text.empty()) throw DataError("line " + std::to_string(line) + ": empty number");
  std::size_t v = 0;
  for (char ch : text) {
    if (ch < '0' || ch > '9')
      throw DataError("line " + std::to_string(line) + ": bad number '" + std::string(text) + "'");
    v = v * 10 + static_cast<std::size_t>(ch - '0');
  }
  return v;
}

std::vector<std::string_view> split_on(std::string_view s, char sep) {
  std::vector<std::string_view> parts;
  std::size_t start = 0;
  while (true) {
    const std::size_t k = s.find(sep, start);
    parts.push_back(
        s.substr(start, k == std::string_view::npos ? std::string_view::npos : k - start));
    if (k == std::string_view::npos) break;
    start = k + 1;
  }
  return parts;
}

}  // namespace

Dataset read_dataset(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw DataError("empty dataset file");
  Dataset d;
  {
    std::istringstream header(line);
    std::string magic, version;
    header >> magic >> version;
    if (magic != "#echo-dataset") throw DataError("missing #echo-dataset header");
    if (version != "v" + std::to_string(kDatasetFormatVersion))
      throw DataError("unsupported dataset format version '" + version + "'");
    std::string kv;
    while (header >> kv) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw DataError("bad header field '" + kv + "'");
      const std::string key = kv.substr(0, eq), value = kv.substr(eq + 1);
      if (key == "task")
        d.task = value;
      else if (key == "vocab_size")
        d.vocab_size = parse_size(value, 1);
      else if (key == "num_classes")
        d.num_classes = parse_size(value, 1);
      else
        throw DataError("unknown header field '" + key + "'");
    }
  }
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto fields = split_on(line, '\t');
    if (fields.size() < 2 || fields.size() > 3)
      throw DataError("line " + std::to_string(lineno) + ": expected 2 or 3 tab-separated fields");
    Sample s;
    for (auto tok : split_on(fields[0], ' ')) s.tokens.push_back(parse_size(tok, lineno));
    s.label = parse_size(fields[1], lineno);
    if (fields.size() == 3) {
      for (auto kv : split_on(fields[2], ' ')) {
        const auto eq = kv.find('=');
        if (eq == std::string_view::npos)
          throw DataError("line " + std::to_string(lineno) + ": bad meta field");
        const auto key = kv.substr(0, eq), value = kv.substr(eq + 1);
        if (key == "trigger") {
          s.meta.trigger_position = parse_size(value, lineno);
        } else if (key == "distractors") {
          for (auto p : split_on(value, ','))
            s.meta.distractor_positions.push_back(parse_size(p, lineno));
        } else {
          throw DataError("line " + std::to_string(lineno) + ": unknown meta key '" +
                          std::string(key) + "'");
        }
      }
    }
    d.samples.push_back(std::move(s));
  }
  d.validate();
  return d;
}

void save_dataset(const Dataset& data, const std::filesystem::path& path) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw DataError("cannot open " + tmp.string() + " for writing");
    write_dataset(out, data);
    if (!out) throw DataError("failed writing " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Dataset load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open dataset " + path.string());
  return read_dataset(in);
}

}  // namespace echo
