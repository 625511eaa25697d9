#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "dropclass/keyvalue.hpp"
#include "dropclass/label_map.hpp"
#include "dropclass/tensor.hpp"

namespace dropclass {

enum class ShapeFamily { band, rectangle, disc };
enum class Relation { above, overlapping, adjacent };
enum class BandAnchor { top, bottom };

using Color = std::array<double, 3>;

/// One class of the synthetic scene.
///
/// Bands span the full width; size_min/size_max are fractions of the image
/// height. Rectangles take their width in pixels from [size_min, size_max]
/// and height = width * aspect. Discs take their radius from the same range.
/// Free-standing objects are centred vertically inside [place_lo, place_hi]
/// (fractions of the image height).
struct ClassDescriptor {
  std::string name;
  ShapeFamily shape = ShapeFamily::rectangle;
  BandAnchor anchor = BandAnchor::top;
  double size_min = 4;
  double size_max = 8;
  double aspect = 1.0;
  Color color{0.5, 0.5, 0.5};
  double jitter = 0.05;
  double presence = 1.0;
  int max_instances = 1;
  double place_lo = 0.0;
  double place_hi = 1.0;
};

/// With probability rho the subject is placed in `relation` to the companion;
/// otherwise it is placed freely and the companion is left out of the scene.
struct CooccurrenceRule {
  int subject = 0;
  int companion = 0;
  double rho = 1.0;
  Relation relation = Relation::above;
};

struct SceneSpec {
  Index image_size = 64;
  std::vector<ClassDescriptor> classes;
  std::vector<CooccurrenceRule> rules;
  std::vector<double> frequency_targets;
  int background = 0;
  double pixel_noise = 0.04;

  Index num_classes() const { return static_cast<Index>(classes.size()); }
  int class_index(const std::string& name) const;
  void validate() const;

  KeyValues to_keyvalues() const;
  static SceneSpec from_keyvalues(const KeyValues& kv);
};

/// Six classes: background, sky (top band), road (bottom band, dominant), car
/// (rectangle above road), bike (small disc on the road, rare) and rider
/// (small rectangle above the bike, rarest). Rules: rider above bike and car
/// above road, both with rho = 1.
SceneSpec default_scene_spec();

struct Sample {
  Tensor image;  // [h, w, 3] in [0, 1]
  LabelMap label;
  std::uint64_t seed = 0;

  bool operator==(const Sample&) const = default;
};

enum class Split { train, val, test };
std::string to_string(Split split);
Split parse_split(const std::string& name);

struct Dataset {
  std::vector<Sample> samples;
  SceneSpec spec;
  Split split = Split::train;

  Index size() const { return static_cast<Index>(samples.size()); }
};

Sample generate_sample(const SceneSpec& spec, std::uint64_t seed);
/// Sample i is generated from seed base_seed + i.
Dataset generate_dataset(const SceneSpec& spec, Index n, std::uint64_t base_seed, Split split = Split::train);

/// Per-class share of non-ignore pixels.
std::vector<double> pixel_frequencies(const Dataset& dataset);
std::vector<double> pixel_frequencies(std::span<const LabelMap> labels, Index num_classes);

/// weight_c = median(f) / f_c.
std::vector<double> median_frequency_weights(std::span<const double> frequencies);

Color mean_color(const Dataset& dataset);

/// Pixels of class c get `fill` as colour and the ignore label.
Sample erase_class(const Sample& sample, int c, const Color& fill);
Dataset erase_class(const Dataset& dataset, int c);

/// Every sample containing class c appears twice (adjacent), others once.
Dataset resample_with_duplication(const Dataset& dataset, int c);

/// `<dir>/img_<i>.dct1`, `<dir>/lab_<i>.dcl1` and `<dir>/scene.cfg`.
void save_dataset(const Dataset& dataset, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir);

}  // namespace dropclass
