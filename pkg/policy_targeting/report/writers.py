"""
Run artifact writers.

Every file a command produces goes through :class:`RunReporter`, which keeps the
list of written paths so the command line can echo them.
"""

import datetime
import json
import logging
import os
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import markdown
import pandas as pd

from policy_targeting.tabular_data import Dataset, write_csv

logger = logging.getLogger("PolicyTargeting.report")

FLOAT_FORMAT = "%.17g"

HTML_TEMPLATE = """<!DOCTYPE html>
<html>
<head>
    <meta charset="utf-8">
    <meta name="viewport" content="width=device-width, initial-scale=1.0">
    <title>{title}</title>
    <style>
        :root {{
            --bg-color: #2b2929;
            --secondary-bg: #1a1a1a;
            --tertiary-bg: #262626;
            --text-color: #d1cccc;
            --secondary-text: #a3a3a3;
            --accent-color: #fb923c;
            --border-color: rgba(82, 82, 82, 0.3);
        }}
        body {{
            font-family: -apple-system, BlinkMacSystemFont, "Segoe UI", Roboto, Helvetica, Arial, sans-serif;
            line-height: 1.6;
            max-width: 1200px;
            margin: 0 auto;
            padding: 20px;
            background-color: var(--bg-color);
            color: var(--text-color);
        }}
        h1, h2, h3 {{ color: white; margin-top: 1.5em; margin-bottom: 0.5em; }}
        h1 {{ border-bottom: 2px solid var(--accent-color); padding-bottom: 10px; }}
        h2 {{ border-bottom: 1px solid var(--border-color); padding-bottom: 5px; }}
        a {{ color: var(--accent-color); text-decoration: none; }}
        table {{
            border-collapse: collapse;
            width: 100%;
            margin: 20px 0;
            background-color: var(--tertiary-bg);
        }}
        th {{ background-color: var(--secondary-bg); color: white; padding: 10px 12px; text-align: left; }}
        td {{ padding: 8px 12px; border-top: 1px solid var(--border-color); }}
        em {{ color: var(--secondary-text); }}
        img {{ background-color: white; max-width: 100%; border-radius: 4px; }}
        code {{ font-family: 'Courier New', Courier, monospace; background-color: var(--secondary-bg); }}
    </style>
</head>
<body>
{body}
</body>
</html>
"""


def markdown_table(frame: pd.DataFrame, float_digits: int = 4) -> str:
    """Render a small frame as a Markdown table."""
    header = "| " + " | ".join(str(c) for c in frame.columns) + " |\n"
    rule = "|" + "|".join("---" for _ in frame.columns) + "|\n"
    rows = []
    for record in frame.itertuples(index=False):
        cells = []
        for value in record:
            if isinstance(value, float):
                cells.append(f"{value:.{float_digits}f}")
            else:
                cells.append(str(value))
        rows.append("| " + " | ".join(cells) + " |\n")
    return header + rule + "".join(rows)


class RunReporter:
    """
    Writes the artifacts of one command into an output directory.

    Args:
        out_dir: Target directory, created if missing
        command: Subcommand name, used in the report heading
    """

    def __init__(self, out_dir: Union[str, os.PathLike], command: str):
        self.out_dir = os.fspath(out_dir)
        self.command = command
        self.written: List[str] = []
        os.makedirs(self.out_dir, exist_ok=True)

    def path(self, name: str) -> str:
        return os.path.join(self.out_dir, name)

    def record(self, path: str) -> str:
        self.written.append(path)
        logger.info(f"Wrote {path}")
        return path

    def write_frame(self, frame: pd.DataFrame, name: str) -> str:
        path = self.path(name)
        frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
        return self.record(path)

    def write_json(self, data: Dict[str, Any], name: str) -> str:
        path = self.path(name)
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            json.dump(data, f, indent=2)
            f.write("\n")
        return self.record(path)

    def write_dataset(self, dataset: Dataset, name: str) -> str:
        return self.record(write_csv(dataset, self.path(name)))

    def add(self, path: str) -> str:
        """Record a file written elsewhere (charts, effective config)."""
        return self.record(path)

    def write_report(self, title: str, sections: Sequence[Tuple[str, str]],
                     overview: Optional[Dict[str, Any]] = None) -> Tuple[str, str]:
        """
        Write ``report.md`` and its HTML rendering.

        Args:
            title: Report heading
            sections: (heading, markdown body) pairs
            overview: Key facts listed at the top

        Returns:
            Tuple[str, str]: Markdown and HTML paths
        """
        md_path = self.path("report.md")
        with open(md_path, "w", encoding="utf-8", newline="\n") as f:
            f.write(f"# {title}\n\n")
            f.write(f"*Generated on: {datetime.datetime.now().strftime('%Y-%m-%d %H:%M:%S')}*\n\n")
            if overview:
                f.write("## Overview\n\n")
                for key, value in overview.items():
                    f.write(f"- {key}: **{value}**\n")
                f.write("\n")
            for heading, body in sections:
                f.write(f"## {heading}\n\n{body.rstrip()}\n\n")
            if self.written:
                f.write("## Files\n\n")
                for path in self.written:
                    f.write(f"- [{os.path.basename(path)}](./{os.path.basename(path)})\n")
        self.record(md_path)

        html_path = self.path("report.html")
        with open(md_path, "r", encoding="utf-8") as f:
            html_content = markdown.markdown(f.read(), extensions=["tables"])
        with open(html_path, "w", encoding="utf-8", newline="\n") as f:
            f.write(HTML_TEMPLATE.format(title=title, body=html_content))
        self.record(html_path)
        return md_path, html_path
