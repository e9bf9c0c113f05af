// Writes an offline search corpus for `foodcrowd collect --fixture-dir`:
//   foodcrowd_make_fixture <labels-file> <out-dir> [images-per-label] [duplicates] [seed]

#include "foodcrowd/crawler.hpp"
#include "foodcrowd/types.hpp"

#include <cstdlib>
#include <exception>
#include <iostream>

int main(int argc, char** argv) {
    if (argc < 3) {
        std::cerr << "usage: foodcrowd_make_fixture <labels-file> <out-dir> [images-per-label] [duplicates] [seed]\n";
        return 2;
    }
    try {
        auto labels = foodcrowd::load_labels(argv[1]);
        int per_label = argc > 3 ? std::atoi(argv[3]) : 40;
        int dups = argc > 4 ? std::atoi(argv[4]) : 5;
        std::uint64_t seed = argc > 5 ? std::strtoull(argv[5], nullptr, 10) : 1;
        std::vector<foodcrowd::crawler::FixtureQuery> queries;
        for (const auto& l : labels) queries.push_back({l.id, per_label, dups, 0});
        foodcrowd::crawler::make_fixture_corpus(argv[2], queries, seed);
        std::cout << "wrote " << labels.size() << " labels x " << per_label + dups << " ranked images to " << argv[2]
                  << "\n";
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
