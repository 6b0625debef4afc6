// Explains one digits8 fixture image and checks the result with the
// complete verifier.
//
//   sample_explain data/fixtures/digits8/net.json data/fixtures/digits8/dataset/000.pgm 0.1

#include <iostream>

#include "fame/fame.hpp"

int main(int argc, char** argv) {
    if (argc < 3) {
        std::cerr << "usage: " << argv[0] << " NETWORK INPUT [EPSILON]\n";
        return 1;
    }
    const fame::Network net = fame::load_network(argv[1]);
    const fame::Vector x = fame::read_input(argv[2]);
    const double eps = argc > 3 ? std::stod(argv[3]) : 0.1;

    const fame::MarginSpec spec(fame::predict(net, x), net.num_classes());
    const auto dom = fame::PerturbationDomain::linf_ball(x, eps);

    fame::PipelineConfig cfg;
    cfg.bounds.intermediate = fame::BoundConfig::Intermediate::backward;
    const fame::Explanation single = fame::single_round(net, dom, spec, cfg);
    const fame::Explanation rec = fame::recursive_free(net, dom, spec, cfg);
    std::cout << "class " << spec.true_class << ": single round keeps " << single.explanation.size() << " of " << dom.size()
              << " features, recursive keeps " << rec.explanation.size() << '\n';

    fame::OracleConfig oc;
    oc.node_budget = 2000;
    const auto check = fame::verify_complete(net, dom.restricted_to(rec.free), spec, oc);
    std::cout << "complete verifier on the recursive explanation: " << fame::status_name(check.status) << " after " << check.nodes << " boxes\n";

    const fame::Image mask = fame::render_mask(net.input_shape(), rec.explanation);
    for (std::size_t r = 0; r < mask.height; ++r) {
        for (std::size_t c = 0; c < mask.width; ++c) std::cout << (mask.pixels[r * mask.width + c] ? '#' : '.');
        std::cout << '\n';
    }
}
