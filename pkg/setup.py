from setuptools import setup, find_packages
import os

# Read the contents of README file
this_directory = os.path.abspath(os.path.dirname(__file__))
with open(os.path.join(this_directory, 'README.md'), encoding='utf-8') as f:
    long_description = f.read()

setup(
    name='distheat',
    version='1.0.0',
    description='Distributed estimation of heterogeneous precision matrices with one-shot and iterative aggregation',
    long_description=long_description,
    long_description_content_type='text/markdown',
    packages=find_packages(where='backend', exclude=['tests', 'tests.*']),
    package_dir={'': 'backend'},
    classifiers=[
        'Development Status :: 4 - Beta',
        'Intended Audience :: Science/Research',
        'Topic :: Scientific/Engineering :: Mathematics',
        'License :: OSI Approved :: MIT License',
        'Programming Language :: Python :: 3',
        'Programming Language :: Python :: 3.9',
        'Programming Language :: Python :: 3.10',
        'Programming Language :: Python :: 3.11',
    ],
    python_requires='>=3.9',
    install_requires=[
        'numpy>=1.26.0',
        'scipy>=1.11.0',
        'joblib>=1.3.2',
        'pandas>=2.1.0',
        'matplotlib>=3.8.0',
        'pydantic>=2.5.3',
        'pydantic-settings>=2.1.0',
        'python-dotenv>=1.0.0',
        'rich>=13.7.1',
        'structlog>=24.1.0',
    ],
    extras_require={
        'test': ['pytest>=7.4.0'],
    },
    entry_points={
        'console_scripts': [
            'distheat=distheat.cli:main',
        ],
    },
    include_package_data=True,
    package_data={
        '': ['*.txt', '*.md'],
    },
)
