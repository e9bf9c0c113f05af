// Regenerates the bundled synthetic score pools:
//   foodcrowd_gen_data <out-dir> [seed]
// writes <out-dir>/food.jsonl and <out-dir>/nonfood.jsonl.

#include "foodcrowd/calibration.hpp"

#include <cstdlib>
#include <filesystem>
#include <iostream>

int main(int argc, char** argv) {
    if (argc < 2) {
        std::cerr << "usage: foodcrowd_gen_data <out-dir> [seed]\n";
        return 2;
    }
    namespace cal = foodcrowd::calibration;
    std::filesystem::path out = argv[1];
    std::uint64_t seed = argc > 2 ? std::strtoull(argv[2], nullptr, 10) : cal::kSyntheticSeed;
    auto pools = cal::synthetic_pools(seed);
    std::vector<cal::LabeledScore> food, nonfood;
    for (double s : pools.food) food.push_back({s, true});
    for (double s : pools.nonfood) nonfood.push_back({s, false});
    std::filesystem::create_directories(out);
    cal::write_score_file(out / "food.jsonl", food);
    cal::write_score_file(out / "nonfood.jsonl", nonfood);
    std::cout << "wrote " << food.size() << " food and " << nonfood.size() << " non-food scores to " << out.string()
              << "\n";
    return 0;
}
