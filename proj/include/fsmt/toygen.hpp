#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "fsmt/dataset.hpp"

namespace fsmt {

// Synthetic image-folder corpus: classes distinguishable by color and
// pattern family (style "patterns"), or label-free iid noise images
// (style "noise", for chance-level protocol checks).
struct ToyCorpusSpec {
  int num_classes = 16;
  int per_class = 40;
  int image_size = 32;
  std::uint64_t seed = 1;
  int train_classes = 8;
  int val_classes = 3;
  int test_classes = 5;
  std::string style = "patterns";  // patterns | noise

  void validate() const;
};

// Writes root/<split>/<class>/img_*.png plus manifest.json under out_dir;
// returns the manifest. Identical specs produce identical corpus bytes.
DatasetManifest generate_toy_corpus(const ToyCorpusSpec& spec,
                                    const std::filesystem::path& out_dir);

}  // namespace fsmt
