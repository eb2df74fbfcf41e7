// Generates the synthetic desk-scale data set: token embeddings with planted
// gender and stereotype directions, a biased occupation corpus, definitional
// tuples, templates, stopwords, a sentiment lexicon, and sample prompts.
//
// Geometry: coordinate 0 carries the gender axis (definitional pairs share an
// identity vector and differ only in its sign), coordinate 1 carries the
// occupation/venue stereotype lean, and the remaining coordinates hold
// per-token identity. Long corpus patterns place the gender word outside the
// model's context window so that window-mean features lose the direct signal.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "fairdec/embeddings.hpp"
#include "fairdec/subspace.hpp"
#include "fairdec/util.hpp"

using fairdec::Rng;
using nlohmann::json;

namespace {

constexpr int kDim = 16;
constexpr std::uint64_t kSeed = 20260801;

const std::vector<std::pair<std::string, std::string>> kGenderPairs = {
    {"woman", "man"},   {"girl", "boy"},        {"she", "he"},
    {"mother", "father"}, {"daughter", "son"},  {"gal", "guy"},
    {"female", "male"}, {"her", "his"},         {"herself", "himself"},
    {"mary", "john"},
};

const std::vector<std::string> kOccF = {"nurse",  "teacher", "librarian", "secretary",
                                        "nanny",  "maid",    "dancer",    "cleaner"};
const std::vector<std::string> kOccM = {"engineer", "carpenter", "mechanic",    "pilot",
                                        "soldier",  "plumber",   "electrician", "surgeon"};
const std::vector<std::string> kVenF = {"hospital", "school", "library", "kitchen"};
const std::vector<std::string> kVenM = {"garage", "workshop", "airport", "factory"};

const std::vector<std::string> kVerbs = {"said",  "worked",  "visited", "helped", "taught",
                                         "fixed", "built",   "cared",   "cooked", "cleaned",
                                         "flew",  "repaired", "treated", "read",  "wrote",
                                         "told",  "cut",     "met"};
const std::vector<std::string> kObjects = {"patient", "student", "child", "book",   "engine",
                                           "plane",   "wall",    "pipe",  "wire",   "tool",
                                           "meal",    "floor",   "letter", "chart", "lesson",
                                           "work",    "job",     "shift", "desk",   "uniform"};
const std::vector<std::string> kAdjectives = {"busy",   "quiet",  "skilled", "kind", "careful",
                                              "strong", "gentle", "clever",  "tired", "happy",
                                              "good",   "old",    "new",     "young", "long"};
const std::vector<std::string> kFunction = {"the", "a",   "an",  "was",   "is",     "that",
                                            "with", "at", "in",  "on",    "to",     "and",
                                            "for", "of",  "every", "all", "day",    "week",
                                            "very", "really", "as", "because", "too", "i"};

const std::vector<std::vector<std::string>> kReligionTuples = {
    {"jewish", "christian", "muslim"},        {"jews", "christians", "muslims"},
    {"torah", "bible", "quran"},              {"synagogue", "church", "mosque"},
    {"rabbi", "priest", "imam"},              {"judaism", "christianity", "islam"},
};

Eigen::VectorXd identity_vector(Rng& rng, int first_coord, double scale) {
  Eigen::VectorXd v = Eigen::VectorXd::Zero(kDim);
  double norm_sq = 0.0;
  for (int i = first_coord; i < kDim; ++i) {
    v[i] = rng.normal();
    norm_sq += v[i] * v[i];
  }
  if (norm_sq > 0.0) v *= scale / std::sqrt(norm_sq);
  return v;
}

Eigen::VectorXd noise_vector(Rng& rng, double scale) {
  Eigen::VectorXd v(kDim);
  for (int i = 0; i < kDim; ++i) v[i] = scale * rng.normal();
  return v;
}

struct Builder {
  fairdec::Vocabulary vocab;
  std::vector<Eigen::VectorXd> rows;

  void add(const std::string& token, const Eigen::VectorXd& v) {
    vocab.add(token);
    rows.push_back(v);
  }
};

template <typename T>
const T& pick(Rng& rng, const std::vector<T>& v) {
  return v[rng.uniform_index(v.size())];
}

}

int main(int argc, char** argv) {
  const std::filesystem::path out_dir = argc > 1 ? argv[1] : "data";
  std::filesystem::create_directories(out_dir);
  Rng rng(kSeed);
  Builder b;

  for (const auto& [female, male] : kGenderPairs) {
    const Eigen::VectorXd shared = identity_vector(rng, 2, 0.8);
    Eigen::VectorXd axis = Eigen::VectorXd::Zero(kDim);
    axis[0] = 1.0;
    b.add(female, shared + axis + noise_vector(rng, 0.02));
    b.add(male, shared - axis + noise_vector(rng, 0.02));
  }
  auto add_leaning = [&](const std::vector<std::string>& tokens, double sign, double axis0,
                         double axis1) {
    for (const auto& token : tokens) {
      Eigen::VectorXd v = identity_vector(rng, 2, 0.8);
      v[0] += sign * axis0;
      v[1] += sign * axis1;
      b.add(token, v + noise_vector(rng, 0.02));
    }
  };
  add_leaning(kOccF, +1.0, 0.25, 0.6);
  add_leaning(kOccM, -1.0, 0.25, 0.6);
  add_leaning(kVenF, +1.0, 0.0, 0.45);
  add_leaning(kVenM, -1.0, 0.0, 0.45);
  auto add_neutral = [&](const std::vector<std::string>& tokens) {
    for (const auto& token : tokens) {
      b.add(token, identity_vector(rng, 2, 0.8) + noise_vector(rng, 0.02));
    }
  };
  add_neutral(kVerbs);
  add_neutral(kObjects);
  add_neutral(kAdjectives);
  add_neutral(kFunction);
  for (const auto& tuple : kReligionTuples) {
    const Eigen::VectorXd shared = identity_vector(rng, 4, 0.7);
    for (std::size_t c = 0; c < tuple.size(); ++c) {
      const double angle = 2.0 * M_PI * static_cast<double>(c) / 3.0;
      Eigen::VectorXd v = shared;
      v[2] += 0.9 * std::cos(angle);
      v[3] += 0.9 * std::sin(angle);
      b.add(tuple[c], v + noise_vector(rng, 0.02));
    }
  }

  Eigen::MatrixXd matrix(static_cast<Eigen::Index>(b.rows.size()), kDim);
  for (std::size_t i = 0; i < b.rows.size(); ++i) matrix.row(static_cast<Eigen::Index>(i)) = b.rows[i];
  const fairdec::EmbeddingTable table(b.vocab, matrix);
  fairdec::write_embedding_file(table, out_dir / "toy_embeddings.txt");

  // Corpus: occupations co-occur with the matching gender 90% of the time.
  std::vector<std::string> corpus;
  const int n_sentences = 1500;
  for (int i = 0; i < n_sentences; ++i) {
    const bool female_class = rng.uniform() < 0.5;
    const bool match = rng.uniform() < 0.9;
    const bool female_person = match ? female_class : !female_class;
    const std::string occ = female_class ? pick(rng, kOccF) : pick(rng, kOccM);
    const std::string ven = female_class ? pick(rng, kVenF) : pick(rng, kVenM);
    const std::string pron = female_person ? (rng.uniform() < 0.7 ? "she" : "mary")
                                           : (rng.uniform() < 0.7 ? "he" : "john");
    const std::string ppos = female_person ? "her" : "his";
    const std::string fam =
        female_person
            ? pick(rng, std::vector<std::string>{"mother", "woman", "girl", "daughter"})
            : pick(rng, std::vector<std::string>{"father", "man", "boy", "son"});
    const std::string verb = pick(rng, std::vector<std::string>{"fixed", "repaired", "built",
                                                                "cleaned", "treated"});
    const std::string adj = pick(rng, kAdjectives);
    const std::string adj2 = pick(rng, kAdjectives);
    const std::string obj = pick(rng, kObjects);
    const std::string obj2 = pick(rng, kObjects);
    const std::string who = pick(rng, std::vector<std::string>{"patient", "student", "child"});
    const std::string grade = pick(rng, std::vector<std::string>{"old", "new", "long", "good"});

    const double roll = rng.uniform();
    std::string line;
    if (roll < 0.20) {
      line = "the " + occ + " said that " + pron + " was " + adj + " at the " + ven;
    } else if (roll < 0.30) {
      line = pron + " worked as a " + occ + " at the " + ven + " every day";
    } else if (roll < 0.36) {
      line = "the " + occ + " helped every " + who + " with the " + obj;
    } else if (roll < 0.46) {
      line = "the " + occ + " " + verb + " the " + obj + " because " + pron + " was " + adj;
    } else if (roll < 0.64) {
      line = pron + " said that the work at the " + adj + " " + ven + " was really " + adj2;
    } else if (roll < 0.78) {
      line = pron + " told every student that the " + obj + " in the " + ven + " was too " + grade;
    } else if (roll < 0.90) {
      line = "the " + fam + " said that the " + obj + " at the " + ven + " was " + adj;
    } else if (roll < 0.95) {
      line = ppos + " " + obj + " was very " + adj + " and really " + adj2;
    } else {
      line = "the " + obj + " at the " + ven + " was " + adj2;
    }
    corpus.push_back(line);
  }
  std::ostringstream corpus_text;
  for (const auto& line : corpus) corpus_text << line << "\n";
  fairdec::write_text_file(out_dir / "toy_corpus.txt", corpus_text.str());

  fairdec::write_text_file(out_dir / "templates.txt",
                           "the XYZ said that\n"
                           "the XYZ worked as a\n"
                           "i met the XYZ at the\n"
                           "every XYZ was really\n"
                           "the XYZ helped the\n"
                           "a very skilled XYZ\n"
                           "the XYZ visited the\n"
                           "that XYZ is very\n");

  json gender;
  gender["domain"] = "gender";
  gender["class_names"] = {"female", "male"};
  gender["sets"] = json::array();
  for (const auto& [female, male] : kGenderPairs) {
    gender["sets"].push_back({female, male});
  }
  fairdec::write_text_file(out_dir / "definitional_gender.json", gender.dump(2) + "\n");

  json religion;
  religion["domain"] = "religion";
  religion["class_names"] = {"judaism", "christianity", "islam"};
  religion["sets"] = kReligionTuples;
  fairdec::write_text_file(out_dir / "definitional_religion.json", religion.dump(2) + "\n");

  std::ostringstream stopwords;
  for (const auto& token : kFunction) stopwords << token << "\n";
  fairdec::write_text_file(out_dir / "stopwords.txt", stopwords.str());

  fairdec::write_text_file(out_dir / "sentiment_lexicon.txt",
                           "good 0.8\n"
                           "kind 0.7\n"
                           "happy 0.9\n"
                           "clever 0.6\n"
                           "gentle 0.5\n"
                           "skilled 0.7\n"
                           "strong 0.4\n"
                           "careful 0.3\n"
                           "new 0.3\n"
                           "young 0.2\n"
                           "busy -0.1\n"
                           "quiet -0.1\n"
                           "long -0.1\n"
                           "old -0.2\n"
                           "tired -0.4\n"
                           "helped 0.6\n"
                           "cared 0.7\n"
                           "treated 0.2\n"
                           "cleaned 0.1\n"
                           "taught 0.4\n");

  fairdec::write_text_file(out_dir / "prompts.txt",
                           "the nurse said that\n"
                           "the engineer said that\n"
                           "she worked as a\n"
                           "he worked as a\n"
                           "the teacher helped the\n"
                           "the mechanic fixed the\n");

  std::cout << "vocab " << table.size() << ", sentences " << corpus.size() << ", dim " << kDim
            << "\n";
  return 0;
}
