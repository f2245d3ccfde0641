#pragma once

// Dataset files, per-user splitting and the planted-structure generator.
//
// On disk a dataset directory holds
//   interactions.tsv   user<TAB>item per line, arbitrary raw id tokens
//   visual.csv / acoustic.csv / textual.csv (any non-empty subset)
//                      header "item_id,dim=<d>", rows "item_id,v1,...,vd"

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "metammf/fusion.hpp"
#include "metammf/heads.hpp"
#include "metammf/linalg.hpp"

namespace metammf {

enum class Modality : std::size_t { visual = 0, acoustic = 1, textual = 2 };
inline constexpr std::array<Modality, 3> kModalities{Modality::visual, Modality::acoustic, Modality::textual};

std::string_view to_string(Modality m);

using UserLists = std::vector<std::vector<std::uint32_t>>;

struct Dataset {
  std::vector<std::string> user_ids;  // dense index -> raw token
  std::vector<std::string> item_ids;
  std::vector<Interaction> interactions;              // unique, sorted by (user, item)
  std::array<std::optional<Matrix>, 3> features;      // num_items x d per modality

  std::size_t num_users() const { return user_ids.size(); }
  std::size_t num_items() const { return item_ids.size(); }
  std::size_t feature_dim() const;
  // Present modalities concatenated in visual, acoustic, textual order.
  Matrix concatenated_features() const;
  ItemModalities item(std::size_t i) const;
  // Per-user sorted item lists.
  UserLists by_user() const;
  // Throws std::logic_error on broken invariants.
  void validate() const;
};

// Users are numbered by first appearance in interactions.tsv; items by first
// appearance across the feature files. Duplicate pairs are dropped with a
// warning on stderr. Throws FormatError with file and line on bad input.
Dataset load_dataset(const std::filesystem::path& dir);

// Feature values are written with 9 significant digits.
void save_dataset(const Dataset& data, const std::filesystem::path& dir);

struct Split {
  UserLists train;
  UserLists validation;
  UserLists test;

  std::vector<Interaction> train_pairs() const;
};

// Per user: shuffle, then floor(10%) (at least 1) to validation and the same
// to test; the remainder trains. Users with fewer than 3 interactions keep
// everything in train.
Split split_dataset(const Dataset& data, std::uint64_t seed);

struct SynthSpec {
  std::size_t users = 200;
  std::size_t items = 300;
  std::size_t clusters = 2;
  std::size_t latent_dim = 8;
  std::array<std::size_t, 3> dims{64, 64, 64};
  // informative[c] lists the modalities that encode the latent vector for
  // items of cluster c. Empty means modality m goes to cluster m % C.
  std::vector<std::vector<Modality>> informative;
  double noise = 0.1;
  double preference_noise = 1.0;  // scale of logistic noise on user scores
  std::size_t interactions_per_user = 20;
  std::uint64_t seed = 0;

  // Informative assignment with the default filled in.
  std::vector<std::vector<Modality>> assignment() const;
  void validate() const;
  // Applies a "key=value" override; keys match the field names, with
  // informative given as e.g. "v|at" (clusters separated by '|').
  void set(std::string_view key, std::string_view value);
};

struct SyntheticData {
  Dataset dataset;
  Matrix item_latents;  // items x latent
  Matrix user_latents;  // users x latent
  std::vector<int> item_cluster;
  std::array<Matrix, 3> encoders;  // d_m x latent per modality
};

// Each item draws a latent vector z ~ N(0, I) and a cluster. Modalities
// informative for that cluster hold E_m z + noise; the others hold isotropic
// Gaussian noise with the same per-entry variance. Each user interacts with
// the top items by u . z plus logistic noise.
SyntheticData generate_synthetic(const SynthSpec& spec);

}  // namespace metammf
