#pragma once

// Candidate class-name extraction from retrieved captions: remove noisy
// content, standardize surface forms, then filter by part of speech and by
// occurrence count.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <regex>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "cased/error.hpp"
#include "cased/unicode.hpp"

#ifndef CASED_DATA_DIR
#define CASED_DATA_DIR "data"
#endif

namespace cased {

inline std::filesystem::path default_data_dir() { return CASED_DATA_DIR; }
inline std::filesystem::path default_pos_lexicon_path() { return default_data_dir() / "pos_lexicon.tsv"; }
inline std::filesystem::path default_meta_words_path() { return default_data_dir() / "meta_words.txt"; }

// Subset of {noun, adjective, verb}.
class PosSet {
 public:
  enum Tag : std::uint8_t { kNoun = 1, kAdjective = 2, kVerb = 4 };

  constexpr PosSet() = default;
  constexpr explicit PosSet(std::uint8_t bits) : bits_(bits & 7) {}

  static constexpr PosSet nouns() { return PosSet(kNoun); }
  static constexpr PosSet all() { return PosSet(kNoun | kAdjective | kVerb); }

  // Accepts "noun,adjective,verb" (or n/a/v, adj, and "all").
  static PosSet parse(std::string_view list) {
    PosSet out;
    std::size_t start = 0;
    while (start <= list.size()) {
      std::size_t end = list.find(',', start);
      if (end == std::string_view::npos) end = list.size();
      std::string item(list.substr(start, end - start));
      item.erase(0, item.find_first_not_of(' '));
      item.erase(item.find_last_not_of(' ') + 1);
      if (item == "noun" || item == "n") out.bits_ |= kNoun;
      else if (item == "adjective" || item == "adj" || item == "a") out.bits_ |= kAdjective;
      else if (item == "verb" || item == "v") out.bits_ |= kVerb;
      else if (item == "all") out.bits_ |= 7;
      else if (!item.empty()) fail(ErrorKind::InvalidArgument, "unknown POS tag '" + item + "'");
      start = end + 1;
    }
    return out;
  }

  constexpr bool empty() const { return bits_ == 0; }
  constexpr bool intersects(PosSet other) const { return (bits_ & other.bits_) != 0; }
  constexpr std::uint8_t bits() const { return bits_; }
  constexpr bool operator==(const PosSet&) const = default;

 private:
  std::uint8_t bits_ = 0;
};

// word -> POS tags, loaded from `word<TAB>tags` lines with tags drawn from
// {n, a, v}.
class PosLexicon {
 public:
  PosLexicon() = default;

  static PosLexicon load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorKind::LexiconMissing, "cannot read POS lexicon " + path.string());
    PosLexicon lex;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty() || line.front() == '#') continue;
      const auto tab = line.find('\t');
      if (tab == std::string::npos) {
        fail(ErrorKind::FormatError, path.string() + ":" + std::to_string(lineno) + ": missing tab");
      }
      std::uint8_t bits = 0;
      for (char c : std::string_view(line).substr(tab + 1)) {
        if (c == 'n') bits |= PosSet::kNoun;
        else if (c == 'a') bits |= PosSet::kAdjective;
        else if (c == 'v') bits |= PosSet::kVerb;
        else if (c != ',' && c != ' ') {
          fail(ErrorKind::FormatError, path.string() + ":" + std::to_string(lineno) + ": bad tag");
        }
      }
      auto& slot = lex.tags_[line.substr(0, tab)];
      slot = PosSet(slot.bits() | bits);
    }
    return lex;
  }

  // Process-wide cache; lexicons are immutable once loaded.
  static std::shared_ptr<const PosLexicon> shared(const std::filesystem::path& path) {
    static std::mutex mu;
    static std::map<std::filesystem::path, std::shared_ptr<const PosLexicon>> cache;
    std::lock_guard lock(mu);
    auto it = cache.find(path);
    if (it != cache.end()) return it->second;
    auto lex = std::make_shared<const PosLexicon>(load(path));
    cache.emplace(path, lex);
    return lex;
  }

  void add(const std::string& word, PosSet tags) {
    auto& slot = tags_[word];
    slot = PosSet(slot.bits() | tags.bits());
  }

  PosSet tags(const std::string& word) const {
    auto it = tags_.find(word);
    return it == tags_.end() ? PosSet{} : it->second;
  }

  std::size_t size() const { return tags_.size(); }

 private:
  std::unordered_map<std::string, PosSet> tags_;
};

inline std::unordered_set<std::string> default_meta_words() {
  return {"image", "images", "photo", "photos", "thumbnail", "thumbnails", "picture", "pictures"};
}

inline std::unordered_set<std::string> load_meta_words(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::IoError, "cannot read meta-word list " + path.string());
  std::unordered_set<std::string> words;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    line.erase(0, line.find_first_not_of(" \t"));
    line.erase(line.find_last_not_of(" \t") + 1);
    if (!line.empty() && line.front() != '#') words.insert(unicode::to_lower(line));
  }
  return words;
}

// Which of the three stages run. Turning stages off reproduces the ablation
// configurations (no stage = raw whitespace-separated words).
struct PipelineStages {
  bool remove = true;
  bool standardize = true;
  bool filter = true;
};

struct FilterConfig {
  std::size_t min_word_length = 3;
  std::unordered_set<std::string> meta_words = default_meta_words();
  PosSet keep_pos = PosSet::nouns();
  std::size_t min_occurrences = 2;
  std::filesystem::path pos_lexicon_path = default_pos_lexicon_path();
  PipelineStages stages;

  void validate() const {
    if (min_word_length < 1) fail(ErrorKind::InvalidArgument, "min_word_length must be >= 1");
    if (min_occurrences < 1) fail(ErrorKind::InvalidArgument, "min_occurrences must be >= 1");
    if (keep_pos.empty()) fail(ErrorKind::InvalidArgument, "keep_pos must be non-empty");
  }
};

// Candidate name -> occurrence count, ordered by name.
using CandidateSet = std::map<std::string, std::size_t>;
using WordCounts = std::map<std::string, std::size_t>;

namespace detail {

inline const std::regex& domain_regex() {
  static const std::regex re(
      R"(^([a-z0-9-]+\.)+(com|org|net|edu|gov|mil|int|io|co|uk|de|fr|jp|cn|ru|info|biz|ly|me|tv|us|ca|au|in|it|es|nl|br|pl|ch|se|no|eu|xyz|app|dev|ai|site|online|blog|shop)(/\S*)?$)");
  return re;
}

inline const std::regex& extension_regex() {
  static const std::regex re(
      R"(\.(jpe?g|png|gif|bmp|tiff?|webp|svg|heic|raw|pdf|mp4|mov|avi|mkv|webm|mp3|wav|html?|php|aspx?|txt|docx?|zip)$)",
      std::regex::icase);
  return re;
}

inline bool is_url(const std::string& token) {
  const std::string lower = unicode::to_lower(token);
  if (lower.find("://") != std::string::npos) return true;
  if (lower.rfind("www.", 0) == 0) return true;
  if (lower.find('.') == std::string::npos) return false;
  if (lower.find('@') != std::string::npos) return true;
  return std::regex_match(lower, domain_regex());
}

inline bool is_open_bracket(char32_t c) {
  return c == U'⟨' || c == U'〈' || c == U'〈' || c == U'‹' || c == U'<' || c == U'«';
}

inline bool is_close_bracket(char32_t c) {
  return c == U'⟩' || c == U'〉' || c == U'〉' || c == U'›' || c == U'>' || c == U'»';
}

// Removes placeholder spans such as "⟨PERSON⟩" or "< PERSON >".
inline std::u32string strip_special_tokens(std::u32string text) {
  constexpr std::size_t kMaxSpan = 48;
  std::u32string out;
  out.reserve(text.size());
  for (std::size_t i = 0; i < text.size(); ++i) {
    if (is_open_bracket(text[i])) {
      std::size_t j = i + 1;
      while (j < text.size() && j - i <= kMaxSpan && !is_close_bracket(text[j]) &&
             !is_open_bracket(text[j])) {
        ++j;
      }
      if (j < text.size() && is_close_bracket(text[j]) && j - i <= kMaxSpan) {
        out.push_back(U' ');
        i = j;
        continue;
      }
    }
    out.push_back(text[i]);
  }
  return out;
}

inline std::u32string trim_non_alnum(std::u32string_view s) {
  std::size_t b = 0, e = s.size();
  auto alnum = [](char32_t c) { return unicode::is_letter(c) || unicode::is_digit(c); };
  while (b < e && !alnum(s[b])) ++b;
  while (e > b && !alnum(s[e - 1])) --e;
  return std::u32string(s.substr(b, e - b));
}

// Splits on punctuation (including '_' and '-'), keeping apostrophes that sit
// between two letters.
inline std::vector<std::u32string> split_on_punct(std::u32string_view s) {
  std::vector<std::u32string> pieces;
  std::u32string cur;
  for (std::size_t i = 0; i < s.size(); ++i) {
    const char32_t c = s[i];
    const bool intra_apostrophe = unicode::is_apostrophe(c) && i > 0 && i + 1 < s.size() &&
                                  unicode::is_letter(s[i - 1]) && unicode::is_letter(s[i + 1]);
    if (unicode::is_punct(c) && !intra_apostrophe) {
      if (!cur.empty()) pieces.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (!cur.empty()) pieces.push_back(std::move(cur));
  return pieces;
}

inline std::vector<std::u32string> split_whitespace(std::u32string_view s) {
  std::vector<std::u32string> out;
  std::u32string cur;
  for (char32_t c : s) {
    if (unicode::is_space(c)) {
      if (!cur.empty()) out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

inline bool all_letters(std::u32string_view s) {
  return !s.empty() && std::all_of(s.begin(), s.end(), unicode::is_letter);
}

}  // namespace detail

// First stage: drop placeholders, URLs, symbol/number-bearing terms, meta
// words and short words; strip file extensions and split compounds.
inline std::vector<std::string> clean_tokens(std::string_view caption, const FilterConfig& cfg) {
  std::vector<std::string> out;
  const std::u32string text = detail::strip_special_tokens(unicode::to_u32(unicode::nfc(caption)));
  for (const auto& raw : detail::split_whitespace(text)) {
    if (raw.front() == U'#' || raw.front() == U'@') continue;  // hashtags and handles
    std::u32string token = detail::trim_non_alnum(raw);
    if (token.empty()) continue;
    std::string utf8 = unicode::to_utf8(token);
    if (detail::is_url(utf8)) continue;
    if (utf8.find('.') != std::string::npos) {
      utf8 = std::regex_replace(utf8, detail::extension_regex(), "");
    }
    for (std::u32string piece : detail::split_on_punct(unicode::to_u32(utf8))) {
      // Possessive suffix.
      if (piece.size() > 2 && unicode::is_apostrophe(piece[piece.size() - 2]) &&
          (piece.back() == U's' || piece.back() == U'S')) {
        piece.resize(piece.size() - 2);
      }
      if (!detail::all_letters(piece)) continue;
      if (piece.size() < cfg.min_word_length) continue;
      std::string word = unicode::to_utf8(piece);
      if (cfg.meta_words.contains(unicode::to_lower(word))) continue;
      out.push_back(std::move(word));
    }
  }
  return out;
}

namespace detail {

struct SingularRules {
  std::unordered_map<std::string, std::string> irregular;
  std::unordered_set<std::string> invariant;
  std::unordered_set<std::string> men_exceptions;
};

inline const SingularRules& singular_rules() {
  static const SingularRules rules = [] {
    SingularRules r;
    r.irregular = {
        {"people", "person"}, {"men", "man"}, {"children", "child"}, {"geese", "goose"}, {"teeth", "tooth"},
        {"feet", "foot"}, {"mice", "mouse"}, {"lice", "louse"}, {"oxen", "ox"},
        {"cacti", "cactus"}, {"fungi", "fungus"}, {"nuclei", "nucleus"}, {"radii", "radius"},
        {"alumni", "alumnus"}, {"stimuli", "stimulus"}, {"criteria", "criterion"},
        {"phenomena", "phenomenon"}, {"indices", "index"}, {"matrices", "matrix"},
        {"vertices", "vertex"}, {"appendices", "appendix"}, {"analyses", "analysis"},
        {"crises", "crisis"}, {"theses", "thesis"}, {"oases", "oasis"}, {"diagnoses", "diagnosis"},
        // -ves
        {"wolves", "wolf"}, {"leaves", "leaf"}, {"halves", "half"}, {"shelves", "shelf"},
        {"bookshelves", "bookshelf"}, {"calves", "calf"}, {"loaves", "loaf"}, {"thieves", "thief"},
        {"scarves", "scarf"}, {"elves", "elf"}, {"selves", "self"}, {"hooves", "hoof"},
        {"dwarves", "dwarf"}, {"wharves", "wharf"}, {"sheaves", "sheaf"}, {"knives", "knife"},
        {"penknives", "penknife"}, {"wives", "wife"}, {"housewives", "housewife"},
        {"midwives", "midwife"}, {"lives", "life"},
        // -oes
        {"tomatoes", "tomato"}, {"potatoes", "potato"}, {"heroes", "hero"}, {"echoes", "echo"},
        {"mosquitoes", "mosquito"}, {"volcanoes", "volcano"}, {"torpedoes", "torpedo"},
        {"vetoes", "veto"}, {"dominoes", "domino"}, {"mangoes", "mango"},
        {"buffaloes", "buffalo"}, {"cargoes", "cargo"}, {"tornadoes", "tornado"},
        {"mottoes", "motto"}, {"grottoes", "grotto"}, {"haloes", "halo"},
        // -uses / -ses whose singular ends in s
        {"buses", "bus"}, {"gases", "gas"}, {"lenses", "lens"}, {"irises", "iris"},
        {"viruses", "virus"}, {"bonuses", "bonus"}, {"cactuses", "cactus"},
        {"campuses", "campus"}, {"octopuses", "octopus"}, {"circuses", "circus"},
        {"choruses", "chorus"}, {"walruses", "walrus"}, {"platypuses", "platypus"},
        {"hippopotamuses", "hippopotamus"}, {"geniuses", "genius"}, {"lotuses", "lotus"},
        {"canvases", "canvas"}, {"atlases", "atlas"}, {"aliases", "alias"},
        {"biases", "bias"}, {"quizzes", "quiz"}, {"waltzes", "waltz"},
        // -ches that drop only the s
        {"headaches", "headache"}, {"toothaches", "toothache"}, {"moustaches", "moustache"},
        {"mustaches", "mustache"}, {"niches", "niche"}, {"quiches", "quiche"},
        {"avalanches", "avalanche"}, {"caches", "cache"}, {"cliches", "cliche"},
        // -ies whose singular is -ie
        {"movies", "movie"}, {"cookies", "cookie"}, {"zombies", "zombie"}, {"hoodies", "hoodie"},
        {"calories", "calorie"}, {"brownies", "brownie"}, {"collies", "collie"},
        {"beanies", "beanie"}, {"prairies", "prairie"}, {"rookies", "rookie"},
        {"selfies", "selfie"}, {"smoothies", "smoothie"}, {"goalies", "goalie"},
        {"pixies", "pixie"}, {"genies", "genie"}, {"hippies", "hippie"}, {"budgies", "budgie"},
        {"veggies", "veggie"}, {"yorkies", "yorkie"}, {"magpies", "magpie"},
        {"sweeties", "sweetie"}, {"aunties", "auntie"}, {"birdies", "birdie"},
        {"onesies", "onesie"}, {"freebies", "freebie"}, {"junkies", "junkie"},
        {"lingeries", "lingerie"}, {"neckties", "necktie"}, {"bowties", "bowtie"},
        {"menus", "menu"}, {"emus", "emu"}, {"gnus", "gnu"}, {"gurus", "guru"},
        {"tutus", "tutu"}, {"haikus", "haiku"}, {"tofus", "tofu"},
    };
    r.invariant = {
        "news", "series", "species", "means", "headquarters", "crossroads", "barracks",
        "gallows", "innings", "measles", "mumps", "billiards", "physics", "mathematics",
        "economics", "politics", "athletics", "gymnastics", "electronics", "aerobics",
        "ethics", "linguistics", "statistics", "jeans", "pants", "trousers", "scissors",
        "pliers", "tongs", "binoculars", "pajamas", "pyjamas", "clothes", "goggles",
        "tweezers", "chaos", "cosmos", "ethos", "pathos", "rhinoceros", "asbestos", "kudos",
        "canvas", "atlas", "christmas", "pancreas", "texas", "kansas", "arkansas", "alias",
        "bias", "dais", "always", "perhaps", "whereas", "overseas", "sometimes",
    };
    for (const auto& [plural, singular] : r.irregular) {
      if (!singular.empty() && singular.back() == 's') r.invariant.insert(singular);
    }
    r.men_exceptions = {"specimen", "abdomen", "omen", "semen", "stamen", "hymen",
                        "regimen", "acumen", "ramen", "yemen", "bitumen", "albumen",
                        "cyclamen", "lumen", "rumen", "dolmen", "foramen", "amen"};
    return r;
  }();
  return rules;
}

inline bool ends_with(std::string_view s, std::string_view suffix) {
  return s.size() >= suffix.size() && s.substr(s.size() - suffix.size()) == suffix;
}

inline std::string singularize_once(const std::string& w) {
  const auto& r = singular_rules();
  if (auto it = r.irregular.find(w); it != r.irregular.end()) return it->second;
  if (unicode::code_points(w) <= 3 || r.invariant.contains(w)) return w;
  if (ends_with(w, "men") && !r.men_exceptions.contains(w)) return w.substr(0, w.size() - 3) + "man";
  if (ends_with(w, "ss") || ends_with(w, "us") || ends_with(w, "is")) return w;
  if (ends_with(w, "ies")) {
    return w.size() > 4 ? w.substr(0, w.size() - 3) + "y" : w.substr(0, w.size() - 1);
  }
  if (ends_with(w, "sses") || ends_with(w, "xes") || ends_with(w, "ches") ||
      ends_with(w, "shes") || ends_with(w, "zzes")) {
    return w.substr(0, w.size() - 2);
  }
  if (ends_with(w, "s")) return w.substr(0, w.size() - 1);
  return w;
}

}  // namespace detail

// Second stage: lowercase plus rule-based English singular form.
inline std::string standardize(std::string_view word) {
  std::string w = unicode::to_lower(unicode::nfc(word));
  // Rules map onto fixed points, so this settles in one or two rounds.
  for (int round = 0; round < 8; ++round) {
    std::string next = detail::singularize_once(w);
    if (next == w) break;
    w = std::move(next);
  }
  return w;
}

// Third stage: keep words whose lexicon tags intersect the keep set and that
// occur at least min_occurrences times.
inline CandidateSet filter_candidates(const WordCounts& words, const FilterConfig& cfg,
                                      const PosLexicon& lexicon) {
  cfg.validate();
  CandidateSet out;
  for (const auto& [word, count] : words) {
    if (count < cfg.min_occurrences) continue;
    if (!lexicon.tags(word).intersects(cfg.keep_pos)) continue;
    out.emplace(word, count);
  }
  return out;
}

inline CandidateSet filter_candidates(const WordCounts& words, const FilterConfig& cfg) {
  return filter_candidates(words, cfg, *PosLexicon::shared(cfg.pos_lexicon_path));
}

// The three stages chained over a caption list. Every stage can be disabled
// through cfg.stages.
class CandidatePipeline {
 public:
  explicit CandidatePipeline(FilterConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    if (cfg_.stages.filter) lexicon_ = PosLexicon::shared(cfg_.pos_lexicon_path);
  }

  CandidatePipeline(FilterConfig cfg, std::shared_ptr<const PosLexicon> lexicon)
      : cfg_(std::move(cfg)), lexicon_(std::move(lexicon)) {
    cfg_.validate();
  }

  const FilterConfig& config() const noexcept { return cfg_; }

  // Remove + standardize for one caption, honoring the stage switches.
  std::vector<std::string> words(std::string_view caption) const {
    std::vector<std::string> tokens;
    if (cfg_.stages.remove) {
      tokens = clean_tokens(caption, cfg_);
    } else {
      for (const auto& t : detail::split_whitespace(unicode::to_u32(unicode::nfc(caption)))) {
        tokens.push_back(unicode::to_utf8(t));
      }
    }
    if (cfg_.stages.standardize) {
      for (auto& t : tokens) t = standardize(t);
    }
    return tokens;
  }

  WordCounts count_words(std::span<const std::string> captions) const {
    WordCounts counts;
    for (const auto& c : captions) {
      for (auto& w : words(c)) ++counts[w];
    }
    return counts;
  }

  CandidateSet extract(std::span<const std::string> captions) const {
    WordCounts counts = count_words(captions);
    if (!cfg_.stages.filter) return counts;
    return filter_candidates(counts, cfg_, *lexicon_);
  }

 private:
  FilterConfig cfg_;
  std::shared_ptr<const PosLexicon> lexicon_;
};

inline CandidateSet extract_candidates(std::span<const std::string> captions, const FilterConfig& cfg) {
  return CandidatePipeline(cfg).extract(captions);
}

}  // namespace cased
