"""
Management command training the grasp classification head.
"""
import csv

from handcrop.core.commands import HandcropCommand
from handcrop.core.grasp import make_grasp_clusters, train_grasp_toy
from handcrop.core.serializers import load_grasp_net, read_grasp_dataset, write_grasp_dataset, write_json


class Command(HandcropCommand):
    help = 'Train the grasp MLP on articulation vectors and save the network'
    experiment = True
    command_name = 'grasp_train'

    def add_command_arguments(self, parser):
        parser.add_argument('--dataset', help='Grasp dataset JSON (default: bundled toy clusters)')
        parser.add_argument('--per-class', type=int, default=20, help='Toy samples per class (default: 20)')
        parser.add_argument('--noise', type=float, default=0.05, help='Toy cluster noise in rad (default: 0.05)')
        parser.add_argument('--epochs', type=int, help='Full-batch epochs')
        parser.add_argument('--lr', type=float, help='Learning rate')
        parser.add_argument('--hidden', type=int, nargs='+', help='Hidden layer widths')
        parser.add_argument('--freeze-hidden', action='store_true', help='Only train the output layer')
        parser.add_argument('--init-net', help='Start from a saved network JSON instead of a fresh one')

    def config_overrides(self, options):
        return {
            'grasp_epochs': options['epochs'],
            'grasp_learning_rate': options['lr'],
            'grasp_hidden': options['hidden'],
        }

    def run(self, **options):
        config = self.config
        recorder = self.start_run(
            per_class=options['per_class'], noise=options['noise'], freeze_hidden=options['freeze_hidden'],
        )
        if options['dataset']:
            recorder.add_input("dataset", options['dataset'])
            dataset = read_grasp_dataset(options['dataset'])
        else:
            dataset = make_grasp_clusters(options['per_class'], options['noise'], seed=config.seed)
            write_grasp_dataset(recorder.output("dataset.json"), dataset)
        net = None
        if options['init_net']:
            recorder.add_input("init_net", options['init_net'])
            net = load_grasp_net(options['init_net'])

        result = train_grasp_toy(
            dataset,
            epochs=config.grasp_epochs,
            lr=config.grasp_learning_rate,
            hidden=config.grasp_hidden,
            seed=config.seed,
            freeze_hidden=options['freeze_hidden'],
            net=net,
        )
        write_json(recorder.output("net.json"), result.net.as_dict())
        with recorder.output("training.csv").open("w", encoding="utf-8", newline="") as handle:
            writer = csv.writer(handle, lineterminator="\n")
            writer.writerow(("epoch", "loss", "accuracy"))
            for epoch, (loss, accuracy) in enumerate(zip(result.losses, result.accuracies)):
                writer.writerow([epoch, repr(float(loss)), repr(float(accuracy))])
        report = {
            "samples": len(dataset),
            "epochs": config.grasp_epochs,
            "final_loss": result.losses[-1],
            "final_accuracy": result.final_accuracy,
        }
        write_json(recorder.output("report.json"), report)
        recorder.finish()
        self.stdout.write(
            f"Trained on {len(dataset)} samples: final loss {report['final_loss']:.6g}, "
            f"final accuracy {report['final_accuracy']:.3f}"
        )
        self.stdout.write(self.style.SUCCESS(f"Wrote {len(recorder.outputs)} files to {recorder.output_dir}"))
