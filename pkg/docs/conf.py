#!/usr/bin/env python3
from typing import Dict, List

#
# jpegcompat documentation build configuration file.
#
# This file is execfile()d with the current directory set to its
# containing dir.

# -- General configuration ------------------------------------------------

extensions: List[str] = []

templates_path: List[str] = []

source_suffix = ".rst"

master_doc = "index"

# General information about the project.
project = "jpegcompat"
copyright = "2026, jpegcompat contributors"
author = "jpegcompat contributors"

# The short X.Y version and the full release, kept in step with
# jpegcompat/__init__.py.
version = "1.0"
release = "1.0.0"

language = "en"

exclude_patterns = ["_build", "Thumbs.db", ".DS_Store"]

pygments_style = "sphinx"

todo_include_todos = False


# -- Options for HTML output ----------------------------------------------

html_theme = "default"

html_static_path: List[str] = []


# -- Options for HTMLHelp output ------------------------------------------

htmlhelp_basename = "jpegcompatdoc"


# -- Options for LaTeX output ---------------------------------------------

latex_elements: Dict[str, str] = {}

latex_documents = [
    (master_doc, "jpegcompat.tex", "jpegcompat Documentation", author, "manual"),
]


# -- Options for manual page output ---------------------------------------

man_pages = [(master_doc, "jpegcompat", "jpegcompat Documentation", [author], 1)]


# -- Options for Texinfo output -------------------------------------------

texinfo_documents = [
    (
        master_doc,
        "jpegcompat",
        "jpegcompat Documentation",
        author,
        "jpegcompat",
        "JPEG compatibility steganalysis.",
        "Miscellaneous",
    ),
]
