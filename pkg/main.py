import click
from src.cli.data_cli import make_data_cli
from src.cli.train_cli import train_cli
from src.cli.generate_cli import generate_cli
from src.cli.eval_cli import eval_cli, report_cli


@click.group()
def cli():
    """NUQ 確率的動画予測（不確かさ付き）"""
    pass


cli.add_command(make_data_cli)
cli.add_command(train_cli)
cli.add_command(generate_cli)
cli.add_command(eval_cli)
cli.add_command(report_cli)

if __name__ == "__main__":
    cli()
