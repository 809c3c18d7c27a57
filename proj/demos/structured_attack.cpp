// Trains a linear classifier on the synthetic blobs-vs-stripes set, then attacks
// one test image three ways and writes the perturbation heatmaps next to the binary.
//
//   ./fwadv_demo_structured [output-dir]

#include <filesystem>
#include <iostream>

#include "fwadv/fwadv.hpp"

using namespace fwadv;

int main(int argc, char** argv) {
  const std::filesystem::path out = argc > 1 ? argv[1] : "demo_out";
  std::filesystem::create_directories(out);

  const Dataset train = synth(7, 400), test = synth(7, 20, 400);
  LinearSoftmax model(Shape{1, 16, 16}, 2, 7);
  const auto rep = train_sgd(model, train, {50, 0.1, 32, 7});
  std::cout << "train accuracy " << rep.train_accuracy << ", test accuracy " << accuracy(model, test) << "\n\n";

  const ImageTensor& x = test.images[0];
  const std::size_t label = test.labels[0];
  write_image(x, (out / "clean.pgm").string());

  struct Case {
    const char* name;
    AttackKind kind;
    AttackConfig cfg;
  };
  AttackConfig nuclear;
  nuclear.ball = DistortionBall::nuclear(1.0);
  AttackConfig groups = nuclear;
  groups.ball = DistortionBall::group_nuclear(GroupPartition::grid(x.shape(), 8, 8), 1.0);
  AttackConfig linf;
  linf.ball = DistortionBall::linf(0.1);
  linf.step_size = 0.02;

  for (const auto& c : {Case{"fw_nuclear", AttackKind::FrankWolfe, nuclear},
                        Case{"fw_group", AttackKind::FrankWolfe, groups}, Case{"pgd_linf", AttackKind::Pgd, linf}}) {
    const auto r = run_attack(c.kind, model, x, label, c.cfg);
    std::cout << c.name << ": label " << label << " -> " << r.prediction << (r.success ? " (fooled)" : "")
              << ", nuclear " << r.nuclear << ", linf " << r.linf << ", pixels changed " << r.nonzero_pixels << "\n";
    write_image(r.x_adv, (out / (std::string(c.name) + "_adv.pgm")).string());
    write_heatmap(r.perturbation, (out / (std::string(c.name) + "_heatmap.pgm")).string());
  }
  std::cout << "\nimages written to " << out.string() << "\n";
}
