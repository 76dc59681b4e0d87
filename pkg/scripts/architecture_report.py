#!/usr/bin/env python3
"""Print receptive-field tables and parameter/MAC counts for each model
family at a chosen input size, plus the VGG16 reference stack."""

import argparse

from s3fnet.analysis import count_params_flops, model_rf_reports, receptive_field, vgg16_conv_stack
from s3fnet.models import MODEL_FAMILIES, ModelConfig, build_network_spec


def show_rf(name, report):
    print(f"\n  [{name}] input {report.input_shape[0]}x{report.input_shape[1]}")
    for e in report.entries:
        print(f"    {e.name:<18s} {e.kind:<10s} stride x{e.stride:<3d} rf {e.rf[0]}x{e.rf[1]}")
    print(f"    final: {report.final_rf[0]}x{report.final_rf[1]}")


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--size", type=int, default=32)
    parser.add_argument("--classes", type=int, default=4)
    args = parser.parse_args()

    print("== VGG16 reference stack at 224x224 ==")
    show_rf("vgg16", receptive_field(vgg16_conv_stack(), (224, 224)))

    config = ModelConfig()
    for family in MODEL_FAMILIES:
        spec = build_network_spec(family, (args.size, args.size, 1), args.classes, config)
        table = count_params_flops(spec)
        print(f"\n== {family} at {args.size}x{args.size} ==")
        print(f"  params {table.total_params} ({table.total_trainable} trainable), "
              f"{table.total_macs} MACs/sample")
        for name, report in model_rf_reports(spec).items():
            show_rf(name, report)


if __name__ == "__main__":
    main()
